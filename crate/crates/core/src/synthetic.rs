//! Generated corpora with planted bias markers, small enough to train on a
//! laptop and simple enough that the right edit is known exactly.
//!
//! Every biased source holds one marker word of its own category, which the
//! target replaces or deletes, and one decoy: a marker word of another
//! category, which the target keeps. Telling the two apart needs the
//! category, so an editor can only get the edits right by listening to the
//! detector.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BiasedRecord, NeutralRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Marker {
    pub word: &'static str,
    /// `None` deletes the marker.
    pub replacement: Option<&'static str>,
}

const fn m(word: &'static str, replacement: Option<&'static str>) -> Marker {
    Marker { word, replacement }
}

pub const CATEGORIES: [(&str, [Marker; 4]); 4] = [
    (
        "politics",
        [
            m("regime", Some("government")),
            m("notorious", None),
            m("slammed", Some("criticized")),
            m("radical", None),
        ],
    ),
    (
        "science",
        [
            m("debunked", Some("disputed")),
            m("groundbreaking", None),
            m("proved", Some("suggested")),
            m("brilliant", None),
        ],
    ),
    (
        "sports",
        [
            m("crushed", Some("defeated")),
            m("legendary", None),
            m("dominated", Some("led")),
            m("heroic", None),
        ],
    ),
    (
        "arts",
        [
            m("masterpiece", Some("work")),
            m("iconic", None),
            m("genius", Some("artist")),
            m("acclaimed", None),
        ],
    ),
];

const FILLER: &str = "the a an of in on at to from with by for and or but as after before during \
    city river school team party album museum station village company report film season league \
    council group member leader player artist writer painter singer scientist study theory survey \
    experiment result paper journal award match game coach club stadium crowd election vote law \
    court minister senator campaign budget policy song novel stage gallery exhibit festival concert \
    region country province capital island valley harbor bridge tower street market library hall \
    opened closed built moved joined released published founded visited reported announced held \
    signed formed named began ended won lost played wrote painted measured tested described \
    early late new old large small local national regional annual public private first second \
    third last several many few two three four five ten hundred year month week day night \
    morning spring summer autumn winter north south east west central upper lower main";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub neutral: usize,
    pub min_filler: usize,
    pub max_filler: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_pairs: 500,
            test_pairs: 200,
            neutral: 1000,
            min_filler: 5,
            max_filler: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<BiasedRecord>,
    pub test: Vec<BiasedRecord>,
    pub neutral: Vec<NeutralRecord>,
}

pub fn filler_words() -> Vec<&'static str> {
    FILLER.split_whitespace().collect()
}

pub fn category_names() -> Vec<&'static str> {
    CATEGORIES.iter().map(|(c, _)| *c).collect()
}

/// The marker planted for `category`, if `word` is one.
pub fn marker_of(category: &str, word: &str) -> Option<Marker> {
    CATEGORIES
        .iter()
        .find(|(c, _)| *c == category)
        .and_then(|(_, ms)| ms.iter().find(|m| m.word == word).copied())
}

fn decoy<R: Rng>(category: usize, rng: &mut R) -> &'static str {
    let other = (category + rng.gen_range(1..CATEGORIES.len())) % CATEGORIES.len();
    CATEGORIES[other].1.choose(rng).expect("markers").word
}

fn filler<R: Rng>(cfg: &SyntheticConfig, words: &[&'static str], rng: &mut R) -> Vec<&'static str> {
    let n = rng.gen_range(cfg.min_filler..=cfg.max_filler);
    (0..n)
        .map(|_| *words.choose(rng).expect("filler"))
        .collect()
}

fn insert_at<R: Rng>(s: &mut Vec<&'static str>, w: &'static str, rng: &mut R) -> usize {
    let i = rng.gen_range(0..=s.len());
    s.insert(i, w);
    i
}

fn join(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

fn biased_pair<R: Rng>(
    id: String,
    cfg: &SyntheticConfig,
    words: &[&'static str],
    rng: &mut R,
) -> BiasedRecord {
    let c = rng.gen_range(0..CATEGORIES.len());
    let (category, markers) = &CATEGORIES[c];
    let marker = *markers.choose(rng).expect("markers");
    let mut src = filler(cfg, words, rng);
    insert_at(&mut src, decoy(c, rng), rng);
    let at = insert_at(&mut src, marker.word, rng);
    let mut tgt = src.clone();
    match marker.replacement {
        Some(r) => tgt[at] = r,
        None => {
            tgt.remove(at);
        }
    }
    let mut labels = vec![0u8; src.len()];
    labels[at] = 1;
    BiasedRecord {
        rev_id: id,
        category: category.to_string(),
        src_tokens: join(&src),
        tgt_tokens: join(&tgt),
        labels,
        src_raw: src.join(" "),
        tgt_raw: tgt.join(" "),
    }
}

fn neutral_sentence<R: Rng>(
    id: String,
    cfg: &SyntheticConfig,
    words: &[&'static str],
    rng: &mut R,
) -> NeutralRecord {
    let c = rng.gen_range(0..CATEGORIES.len());
    let mut s = filler(cfg, words, rng);
    for _ in 0..rng.gen_range(0..=2) {
        insert_at(&mut s, decoy(c, rng), rng);
    }
    // replacement words occur in ordinary text too
    if rng.gen_bool(0.3) {
        let r = CATEGORIES
            .iter()
            .flat_map(|(_, ms)| ms.iter().filter_map(|m| m.replacement))
            .collect::<Vec<_>>();
        insert_at(&mut s, r.choose(rng).expect("replacements"), rng);
    }
    NeutralRecord {
        rev_id: id,
        category: CATEGORIES[c].0.to_string(),
        tokens: join(&s),
        raw: s.join(" "),
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words = filler_words();
    let train = (0..cfg.train_pairs)
        .map(|i| biased_pair(format!("syn-train-{i}"), cfg, &words, &mut rng))
        .collect();
    let test = (0..cfg.test_pairs)
        .map(|i| biased_pair(format!("syn-test-{i}"), cfg, &words, &mut rng))
        .collect();
    let neutral = (0..cfg.neutral)
        .map(|i| neutral_sentence(format!("syn-neutral-{i}"), cfg, &words, &mut rng))
        .collect();
    SyntheticCorpus {
        train,
        test,
        neutral,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_small() {
        let corpus = generate(&SyntheticConfig::default());
        let mut words: Vec<&str> = corpus
            .train
            .iter()
            .chain(&corpus.test)
            .flat_map(|r| r.src_tokens.iter().chain(&r.tgt_tokens))
            .chain(corpus.neutral.iter().flat_map(|r| &r.tokens))
            .map(String::as_str)
            .collect();
        words.sort_unstable();
        words.dedup();
        assert!(words.len() <= 300, "{}", words.len());
    }

    #[test]
    fn one_marker_one_decoy() {
        let corpus = generate(&SyntheticConfig::default());
        for r in &corpus.train {
            let own: Vec<usize> = (0..r.src_tokens.len())
                .filter(|&i| marker_of(&r.category, &r.src_tokens[i]).is_some())
                .collect();
            assert_eq!(own.len(), 1);
            assert_eq!(r.labels[own[0]], 1);
            assert_eq!(r.labels.iter().map(|&l| l as usize).sum::<usize>(), 1);
        }
    }
}
