//! Revision records to biased/neutral sentence-pair splits.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::{
    is_proper_noun_like, labels_from_diff, levenshtein_chars, sentence_bleu, token_diff, tokenize,
    EditScript, OpKind, Sentence,
};
use crate::{Error, Result};

const WORDLIST: &str = include_str!("../data/wordlist.txt");
const MISSPELLINGS: &str = include_str!("../data/misspellings.txt");

/// Titles and abbreviations whose trailing period never ends a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "gen", "gov", "sen", "rep", "col",
    "lt", "sgt", "capt", "rev", "e.g", "i.e", "u.s",
];

/// Inflectional endings treated as interchangeable by the spelling/grammar rule.
const SUFFIXES: &[&str] = &[
    "", "s", "es", "ed", "d", "ing", "er", "est", "ly", "y", "ies", "ied",
];

const REFERENCE_PATTERNS: &[&str] = &[
    "http://",
    "https://",
    "www.",
    "<ref",
    "{{cite",
    "{{citation",
    "[[",
    "[http",
];

const TABLE_MARKUP: &[&str] = &["{|", "||", "|}"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevisionPair {
    pub rev_id: String,
    pub category: String,
    pub comment: String,
    pub pre_text: String,
    pub post_text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair {
    pub source: Sentence,
    pub target: Sentence,
    pub align_score: f64,
    pub rev_id: String,
    pub category: String,
    pub context_prev: Option<Sentence>,
    pub context_next: Option<Sentence>,
}

impl AlignedPair {
    pub fn is_changed(&self) -> bool {
        self.source.raw.trim() != self.target.raw.trim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditClass {
    SingleWord,
    MultiWord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub pair: AlignedPair,
    pub labels: Vec<u8>,
    pub edit_class: EditClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    MultiSentence,
    MinEdit,
    MaxEdit,
    ProperNoun,
    SpellingGrammar,
    ReferenceHyperlink,
    NonLiterary,
    LengthRatio,
    NoAlignment,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MultiSentence => "multi-sentence",
            RejectReason::MinEdit => "min-edit",
            RejectReason::MaxEdit => "max-edit",
            RejectReason::ProperNoun => "proper-noun",
            RejectReason::SpellingGrammar => "spelling-grammar",
            RejectReason::ReferenceHyperlink => "reference-hyperlink",
            RejectReason::NonLiterary => "non-literary",
            RejectReason::LengthRatio => "length-ratio",
            RejectReason::NoAlignment => "no-alignment",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reject {
    pub rev_id: String,
    /// Source sentence; absent for revision-level rejects.
    pub source: Option<Sentence>,
    pub target: Option<Sentence>,
    pub reason: RejectReason,
}

#[derive(Clone, Debug)]
pub struct CorpusConfig {
    pub window: usize,
    pub min_edit: usize,
    pub length_percentile: f64,
    /// Treat "X." for a single capital letter X as an initial, not a sentence end.
    pub guard_initials: bool,
    pub wordlist: HashSet<String>,
    pub misspellings: HashSet<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            window: 5,
            min_edit: 4,
            length_percentile: 95.0,
            guard_initials: true,
            wordlist: word_set(WORDLIST),
            misspellings: word_set(MISSPELLINGS),
        }
    }
}

fn word_set(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Splits on `.`, `!` or `?` (plus any closing quotes or brackets) when
/// followed by whitespace and an uppercase letter, or by the end of the text.
pub fn split_sentences(doc: &str, guard_initials: bool) -> Vec<Sentence> {
    let chars: Vec<(usize, char)> = doc.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut k = 0;
    while k < chars.len() {
        let (_, ch) = chars[k];
        if !matches!(ch, '.' | '!' | '?') {
            k += 1;
            continue;
        }
        let mut end = k + 1;
        while end < chars.len()
            && matches!(
                chars[end].1,
                '.' | '!' | '?' | '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}'
            )
        {
            end += 1;
        }
        let mut next = end;
        while next < chars.len() && chars[next].1.is_whitespace() {
            next += 1;
        }
        let boundary = next == chars.len() || (next > end && chars[next].1.is_uppercase());
        let guarded = ch == '.' && is_guarded(doc, chars[k].0, guard_initials);
        if boundary && !guarded {
            let byte_end = chars.get(end).map_or(doc.len(), |c| c.0);
            if let Ok(s) = tokenize(&doc[start..byte_end]) {
                out.push(s);
            }
            start = byte_end;
        }
        k = end;
    }
    if let Ok(s) = tokenize(&doc[start..]) {
        out.push(s);
    }
    out
}

fn is_guarded(doc: &str, period: usize, guard_initials: bool) -> bool {
    let word = doc[..period]
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(['(', '"', '\'']);
    if guard_initials {
        let mut cs = word.chars();
        if let (Some(c), None) = (cs.next(), cs.next()) {
            if c.is_uppercase() {
                return true;
            }
        }
    }
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub pre: usize,
    pub post: usize,
    pub score: f64,
}

/// Pairs each pre-edit sentence with a post-edit sentence at most `window`
/// positions away, taking candidates greedily by descending BLEU (closer
/// index, then lower post index, on ties). Each sentence is used at most once
/// and zero-score pairs are never formed. Result is ordered by `pre`.
pub fn align_sentences(pre: &[Sentence], post: &[Sentence], window: usize) -> Vec<Alignment> {
    let mut cands = Vec::new();
    for (i, s) in pre.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(post.len());
        for (j, t) in post.iter().enumerate().take(hi).skip(lo) {
            let score = sentence_bleu(s, t, 4);
            if score > 0.0 {
                cands.push(Alignment {
                    pre: i,
                    post: j,
                    score,
                });
            }
        }
    }
    cands.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.pre.abs_diff(a.post).cmp(&b.pre.abs_diff(b.post)))
            .then(a.post.cmp(&b.post))
            .then(a.pre.cmp(&b.pre))
    });
    let mut pre_used = vec![false; pre.len()];
    let mut post_used = vec![false; post.len()];
    let mut out = Vec::new();
    for c in cands {
        if !pre_used[c.pre] && !post_used[c.post] {
            pre_used[c.pre] = true;
            post_used[c.post] = true;
            out.push(c);
        }
    }
    out.sort_by_key(|a| a.pre);
    out
}

#[derive(Clone, Debug, Default)]
pub struct FilterOutcome {
    pub kept: Vec<LabeledPair>,
    pub rejects: Vec<Reject>,
    /// Unchanged aligned sentences usable as neutral examples.
    pub unchanged: Vec<AlignedPair>,
}

/// Applies every per-revision and per-pair exclusion rule, in order.
pub fn apply_filters(aligned: Vec<AlignedPair>, cfg: &CorpusConfig) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    let changed = aligned.iter().filter(|p| p.is_changed()).count();
    if changed > 1 {
        out.rejects = aligned
            .into_iter()
            .map(|p| reject(p, RejectReason::MultiSentence))
            .collect();
        return out;
    }
    for pair in aligned {
        if !pair.is_changed() {
            out.unchanged.push(pair.clone());
            out.rejects.push(reject(pair, RejectReason::MinEdit));
            continue;
        }
        match check_pair(&pair, cfg) {
            Ok((labels, edit_class)) => out.kept.push(LabeledPair {
                pair,
                labels,
                edit_class,
            }),
            Err(reason) => out.rejects.push(reject(pair, reason)),
        }
    }
    out
}

fn reject(p: AlignedPair, reason: RejectReason) -> Reject {
    Reject {
        rev_id: p.rev_id,
        source: Some(p.source),
        target: Some(p.target),
        reason,
    }
}

/// The per-pair rules; returns the first failing one.
pub fn check_pair(
    pair: &AlignedPair,
    cfg: &CorpusConfig,
) -> std::result::Result<(Vec<u8>, EditClass), RejectReason> {
    let (s, t) = (&pair.source, &pair.target);
    if levenshtein_chars(&s.raw, &t.raw) < cfg.min_edit {
        return Err(RejectReason::MinEdit);
    }
    let script = token_diff(s, t);
    let labels = labels_from_diff(&script, s.len()).expect("diff covers the source");
    let n = s.len();
    let changed_words: usize = labels.iter().map(|&l| l as usize).sum();
    if 2 * changed_words > n {
        return Err(RejectReason::MaxEdit);
    }
    let proper = s
        .tokens
        .iter()
        .enumerate()
        .filter(|(i, tok)| is_proper_noun_like(tok, *i))
        .count();
    if 2 * proper > n {
        return Err(RejectReason::ProperNoun);
    }
    if is_spelling_fix(s, t, &script, cfg) {
        return Err(RejectReason::SpellingGrammar);
    }
    if adds_reference(&s.raw, &t.raw) {
        return Err(RejectReason::ReferenceHyperlink);
    }
    if is_non_literary(s, t, &script) {
        return Err(RejectReason::NonLiterary);
    }
    let single = changed_words == 1 && !script.ops.iter().any(|op| op.kind == OpKind::Insert);
    let class = if single {
        EditClass::SingleWord
    } else {
        EditClass::MultiWord
    };
    Ok((labels, class))
}

/// Every change swaps words one for one, and each swap looks like a typo or
/// inflection fix.
fn is_spelling_fix(s: &Sentence, t: &Sentence, script: &EditScript, cfg: &CorpusConfig) -> bool {
    let mut any = false;
    for op in script.changed() {
        if op.kind != OpKind::Replace || op.src.len() != op.tgt.len() {
            return false;
        }
        for (from, to) in s.tokens[op.src.clone()]
            .iter()
            .zip(&t.tokens[op.tgt.clone()])
        {
            if !is_spelling_swap(&from.norm, &to.norm, cfg) {
                return false;
            }
        }
        any = true;
    }
    any
}

pub fn is_spelling_swap(from: &str, to: &str, cfg: &CorpusConfig) -> bool {
    if cfg.misspellings.contains(from) {
        return true;
    }
    let mut a: Vec<char> = from.chars().collect();
    let mut b: Vec<char> = to.chars().collect();
    a.sort_unstable();
    b.sort_unstable();
    if a == b {
        return true;
    }
    if levenshtein_chars(from, to) <= 2 && cfg.wordlist.contains(to) && !cfg.wordlist.contains(from)
    {
        return true;
    }
    is_inflection_swap(from, to)
}

fn is_inflection_swap(from: &str, to: &str) -> bool {
    SUFFIXES.iter().any(|sa| {
        SUFFIXES.iter().any(|sb| {
            sa != sb
                && from
                    .strip_suffix(sa)
                    .zip(to.strip_suffix(sb))
                    .is_some_and(|(x, y)| x == y && x.chars().count() >= 3)
        })
    })
}

pub fn adds_reference(source: &str, target: &str) -> bool {
    let (s, t) = (source.to_lowercase(), target.to_lowercase());
    REFERENCE_PATTERNS
        .iter()
        .any(|p| t.matches(p).count() > s.matches(p).count())
}

fn is_non_literary(s: &Sentence, t: &Sentence, script: &EditScript) -> bool {
    if TABLE_MARKUP
        .iter()
        .any(|m| s.raw.contains(m) || t.raw.contains(m))
    {
        return true;
    }
    let punct = |w: &str| !w.chars().any(char::is_alphanumeric);
    script.changed().all(|op| {
        s.tokens[op.src.clone()].iter().all(|tok| punct(&tok.norm))
            && t.tokens[op.tgt.clone()].iter().all(|tok| punct(&tok.norm))
    })
}

pub fn length_ratio(p: &AlignedPair) -> f64 {
    let (n, m) = (p.source.len(), p.target.len());
    n.max(m) as f64 / n.min(m).max(1) as f64
}

/// Nearest-rank percentile of `values`.
pub fn nearest_rank(values: &[f64], percentile: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub const MIN_PERCENTILE_PAIRS: usize = 20;

/// Splits `pairs` into those within the batch's `percentile` length ratio
/// and those beyond it.
pub fn length_ratio_filter<P: AsRef<AlignedPair>>(
    pairs: Vec<P>,
    percentile: f64,
) -> Result<(Vec<P>, Vec<P>)> {
    if pairs.len() < MIN_PERCENTILE_PAIRS {
        return Err(Error::TooFewPairs {
            found: pairs.len(),
            min: MIN_PERCENTILE_PAIRS,
        });
    }
    let ratios: Vec<f64> = pairs.iter().map(|p| length_ratio(p.as_ref())).collect();
    let cut = nearest_rank(&ratios, percentile);
    Ok(pairs
        .into_iter()
        .partition(|p| length_ratio(p.as_ref()) <= cut))
}

impl AsRef<AlignedPair> for AlignedPair {
    fn as_ref(&self) -> &AlignedPair {
        self
    }
}

impl AsRef<AlignedPair> for LabeledPair {
    fn as_ref(&self) -> &AlignedPair {
        &self.pair
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasedRecord {
    pub rev_id: String,
    pub category: String,
    pub src_tokens: Vec<String>,
    pub tgt_tokens: Vec<String>,
    pub labels: Vec<u8>,
    pub src_raw: String,
    pub tgt_raw: String,
}

impl From<&LabeledPair> for BiasedRecord {
    fn from(p: &LabeledPair) -> Self {
        Self {
            rev_id: p.pair.rev_id.clone(),
            category: p.pair.category.clone(),
            src_tokens: p.pair.source.norm_strings(),
            tgt_tokens: p.pair.target.norm_strings(),
            labels: p.labels.clone(),
            src_raw: p.pair.source.raw.clone(),
            tgt_raw: p.pair.target.raw.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeutralRecord {
    pub rev_id: String,
    pub category: String,
    pub tokens: Vec<String>,
    pub raw: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub pairs: usize,
    pub total_words: usize,
    pub mean_length: f64,
    /// Absent for the neutral split, which has no revisions.
    pub mean_revised_words: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records: usize,
    pub malformed: usize,
    pub biased_full: SplitStats,
    pub biased_word: SplitStats,
    pub neutral: SplitStats,
    pub rejects: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct CorpusSplits {
    pub biased_full: Vec<BiasedRecord>,
    pub biased_word: Vec<BiasedRecord>,
    pub neutral: Vec<NeutralRecord>,
    pub rejects: Vec<Reject>,
    pub stats: CorpusStats,
}

fn biased_stats(rows: &[BiasedRecord]) -> SplitStats {
    let n = rows.len();
    let src: usize = rows.iter().map(|r| r.src_tokens.len()).sum();
    let tgt: usize = rows.iter().map(|r| r.tgt_tokens.len()).sum();
    let revised: usize = rows
        .iter()
        .map(|r| r.labels.iter().map(|&l| l as usize).sum::<usize>())
        .sum();
    SplitStats {
        pairs: n,
        total_words: src + tgt,
        mean_length: mean(src, n),
        mean_revised_words: Some(mean(revised, n)),
    }
}

fn mean(total: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

/// Aligns one revision and attaches its context sentences.
pub fn align_revision(rp: &RevisionPair, cfg: &CorpusConfig) -> (Vec<AlignedPair>, Vec<Reject>) {
    let pre = split_sentences(&rp.pre_text, cfg.guard_initials);
    let post = split_sentences(&rp.post_text, cfg.guard_initials);
    let alignments = align_sentences(&pre, &post, cfg.window);
    let mut claimed = vec![false; pre.len()];
    let mut aligned = Vec::with_capacity(alignments.len());
    for a in alignments {
        claimed[a.pre] = true;
        aligned.push(AlignedPair {
            source: pre[a.pre].clone(),
            target: post[a.post].clone(),
            align_score: a.score,
            rev_id: rp.rev_id.clone(),
            category: rp.category.clone(),
            context_prev: a.pre.checked_sub(1).map(|i| pre[i].clone()),
            context_next: pre.get(a.pre + 1).cloned(),
        });
    }
    let rejects = pre
        .into_iter()
        .zip(claimed)
        .filter(|(_, c)| !c)
        .map(|(s, _)| Reject {
            rev_id: rp.rev_id.clone(),
            source: Some(s),
            target: None,
            reason: RejectReason::NoAlignment,
        })
        .collect();
    (aligned, rejects)
}

/// Runs the whole pipeline over parsed records. `malformed` is carried into
/// the statistics report.
pub fn build_corpus(
    records: &[RevisionPair],
    malformed: usize,
    cfg: &CorpusConfig,
) -> CorpusSplits {
    let mut kept = Vec::new();
    let mut rejects = Vec::new();
    let mut neutral = Vec::new();
    for rp in records {
        let (aligned, unaligned) = align_revision(rp, cfg);
        rejects.extend(unaligned);
        let outcome = apply_filters(aligned, cfg);
        kept.extend(outcome.kept);
        rejects.extend(outcome.rejects);
        neutral.extend(outcome.unchanged.into_iter().map(|p| NeutralRecord {
            rev_id: p.rev_id,
            category: p.category,
            tokens: p.source.norm_strings(),
            raw: p.source.raw,
        }));
    }
    let kept = match length_ratio_filter(kept.clone(), cfg.length_percentile) {
        Ok((within, beyond)) => {
            rejects.extend(
                beyond
                    .into_iter()
                    .map(|p| reject(p.pair, RejectReason::LengthRatio)),
            );
            within
        }
        Err(e) => {
            log::warn!("length-ratio filter skipped: {e}");
            kept
        }
    };
    let biased_full: Vec<BiasedRecord> = kept.iter().map(BiasedRecord::from).collect();
    let biased_word: Vec<BiasedRecord> = kept
        .iter()
        .filter(|p| p.edit_class == EditClass::SingleWord)
        .map(BiasedRecord::from)
        .collect();
    let mut reject_counts = BTreeMap::new();
    for r in &rejects {
        *reject_counts
            .entry(r.reason.as_str().to_string())
            .or_insert(0) += 1;
    }
    let neutral_words: usize = neutral.iter().map(|r| r.tokens.len()).sum();
    let stats = CorpusStats {
        records: records.len(),
        malformed,
        biased_full: biased_stats(&biased_full),
        biased_word: biased_stats(&biased_word),
        neutral: SplitStats {
            pairs: neutral.len(),
            total_words: neutral_words,
            mean_length: mean(neutral_words, neutral.len()),
            mean_revised_words: None,
        },
        rejects: reject_counts,
    };
    CorpusSplits {
        biased_full,
        biased_word,
        neutral,
        rejects,
        stats,
    }
}

/// Reads line-delimited revision records. Lines that fail to parse, and
/// records repeating an earlier `rev_id`, are skipped and counted.
pub fn read_records(path: &Path) -> Result<(Vec<RevisionPair>, usize)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut malformed = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RevisionPair>(&line) {
            Ok(rp) if seen.insert(rp.rev_id.clone()) => records.push(rp),
            Ok(rp) => {
                log::warn!(
                    "{}:{}: duplicate rev_id {}",
                    path.display(),
                    lineno + 1,
                    rp.rev_id
                );
                malformed += 1;
            }
            Err(e) => {
                log::warn!(
                    "{}:{}: skipping malformed record: {e}",
                    path.display(),
                    lineno + 1
                );
                malformed += 1;
            }
        }
    }
    if malformed > 0 {
        log::warn!("{}: skipped {malformed} malformed records", path.display());
    }
    Ok((records, malformed))
}

pub const BIASED_FULL_FILE: &str = "biased_full.jsonl";
pub const BIASED_WORD_FILE: &str = "biased_word.jsonl";
pub const NEUTRAL_FILE: &str = "neutral.jsonl";
pub const STATS_FILE: &str = "stats.json";

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })
        })
        .collect()
}

impl CorpusSplits {
    /// Writes the three splits and the statistics report into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(BIASED_FULL_FILE), &self.biased_full)?;
        write_jsonl(&dir.join(BIASED_WORD_FILE), &self.biased_word)?;
        write_jsonl(&dir.join(NEUTRAL_FILE), &self.neutral)?;
        let stats_path = dir.join(STATS_FILE);
        let mut json = serde_json::to_string_pretty(&self.stats).map_err(|e| Error::Json {
            path: stats_path.clone(),
            source: e,
        })?;
        json.push('\n');
        fs::write(&stats_path, json).map_err(|e| Error::io(&stats_path, e))
    }
}
