#[path = "common/bleu_oracle.rs"]
mod bleu_oracle;

use npov::text::{
    bleu_words, corpus_bleu, corpus_bleu_words, diff_words, labels_from_diff, levenshtein_chars,
    sentence_bleu, token_diff, tokenize, OpKind,
};
use proptest::prelude::*;

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    // Brute force: largest subset of `a` (as a mask) that is a subsequence of `b`.
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&str> = (0..a.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| a[i])
            .collect();
        let mut it = b.iter();
        if sub.iter().all(|w| it.any(|x| x == w)) {
            best = best.max(sub.len());
        }
    }
    best
}

#[test]
fn three_token_diffs_match_brute_force_lcs() {
    let alphabet = ["a", "b", "c"];
    let mut all = Vec::new();
    for x in alphabet {
        for y in alphabet {
            for z in alphabet {
                all.push(vec![x, y, z]);
            }
        }
    }
    for a in &all {
        for b in &all {
            let d = diff_words(a, b);
            let kept: usize = d
                .ops
                .iter()
                .filter(|op| op.kind == OpKind::Equal)
                .map(|op| op.src.len())
                .sum();
            assert_eq!(kept, lcs_len(a, b), "{a:?} vs {b:?}");
        }
    }
    let d = diff_words(&["a", "b", "c"], &["a", "c"]);
    let changed: Vec<_> = d.changed().collect();
    assert_eq!(changed.len(), 1);
    assert_eq!(
        (changed[0].kind, changed[0].src.clone()),
        (OpKind::Delete, 1..2)
    );
}

#[test]
fn repeated_word_bleu_matches_formula() {
    let c = ["the", "the", "the"];
    let r = ["the", "cat"];
    let (m, t) = bleu_oracle::modified_precision(&c, &r, 1);
    assert_eq!((m, t), (1.0, 3.0));
    let want = bleu_oracle::sentence(&c, &r);
    assert!((bleu_words(&c, &r, 4) - want).abs() < 1e-12);
    // p1 = 1/3, p2 = 1/3, p3 = 1/2, p4 = 1/1 and no brevity penalty.
    let hand = (1.0f64 / 3.0 * 1.0 / 3.0 * 0.5 * 1.0).powf(0.25);
    assert!((want - hand).abs() < 1e-12);
}

#[test]
fn two_pair_corpus_bleu_uses_pooled_counts() {
    let a = tokenize("the cat sat down").unwrap();
    let ar = tokenize("the cat sat up").unwrap();
    let b = tokenize("a dog ran home").unwrap();
    let br = tokenize("a dog ran home").unwrap();
    // Pooled clipped/total: 1-grams 7/8, 2-grams 5/6, 3-grams 3/4, 4-grams 1/2.
    let hand = (7.0f64 / 8.0 * 5.0 / 6.0 * 3.0 / 4.0 * 1.0 / 2.0).powf(0.25);
    let got = corpus_bleu(&[(a, ar), (b, br)]).unwrap();
    assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
}

#[test]
fn single_pair_corpus_bleu_without_smoothing_gap() {
    let a = tokenize("the cat sat on the mat").unwrap();
    let b = tokenize("the cat sat on a mat").unwrap();
    let corpus = corpus_bleu(&[(a.clone(), b.clone())]).unwrap();
    let want = bleu_oracle::corpus(&[(a.norms(), b.norms())]);
    assert!((corpus - want).abs() < 1e-12);
    assert!((corpus_bleu(&[(a.clone(), a.clone())]).unwrap() - 1.0).abs() < 1e-12);
    assert!(sentence_bleu(&a, &b, 4) > 0.0);
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "c", "d", "e", "the", "of"]).prop_map(String::from)
}

fn sentence_words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), 1..10)
}

proptest! {
    #[test]
    fn levenshtein_is_a_metric(a in "[abc]{0,6}", b in "[abc]{0,6}", c in "[abc]{0,6}") {
        let ab = levenshtein_chars(&a, &b);
        prop_assert_eq!(ab, levenshtein_chars(&b, &a));
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(levenshtein_chars(&a, &c) <= ab + levenshtein_chars(&b, &c));
    }

    #[test]
    fn diff_reconstructs_target(a in sentence_words(), b in sentence_words()) {
        let d = diff_words(&a, &b);
        prop_assert_eq!(d.apply(&a, &b), b.clone());
        let mut si = 0;
        let mut ti = 0;
        for op in &d.ops {
            prop_assert_eq!(op.src.start, si);
            prop_assert_eq!(op.tgt.start, ti);
            si = op.src.end;
            ti = op.tgt.end;
        }
        prop_assert_eq!((si, ti), (a.len(), b.len()));
        let labels = labels_from_diff(&d, a.len()).unwrap();
        prop_assert_eq!(labels.len(), a.len());
        let covered: usize = d.ops.iter()
            .filter(|op| matches!(op.kind, OpKind::Delete | OpKind::Replace))
            .map(|op| op.src.len())
            .sum();
        prop_assert_eq!(labels.iter().map(|&l| l as usize).sum::<usize>(), covered);
    }

    #[test]
    fn bleu_is_bounded_and_reflexive(a in sentence_words(), b in sentence_words()) {
        prop_assert!((bleu_words(&a, &a, 4) - 1.0).abs() < 1e-12);
        let s = bleu_words(&a, &b, 4);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn shuffled_candidate_keeps_clipped_unigrams(a in sentence_words(), b in sentence_words(), seed in 0u64..1000) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = a.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let r: Vec<&str> = b.iter().map(|s| s.as_str()).collect();
        let x: Vec<&str> = a.iter().map(|s| s.as_str()).collect();
        let y: Vec<&str> = shuffled.iter().map(|s| s.as_str()).collect();
        prop_assert_eq!(bleu_oracle::modified_precision(&x, &r, 1), bleu_oracle::modified_precision(&y, &r, 1));
    }

    #[test]
    fn repeated_pairs_do_not_change_corpus_bleu(a in sentence_words(), b in sentence_words(), k in 1usize..5) {
        let one = corpus_bleu_words(&[(a.clone(), b.clone())], 4).unwrap();
        let many = corpus_bleu_words(&vec![(a, b); k], 4).unwrap();
        prop_assert!((one - many).abs() < 1e-12);
    }
}

#[test]
fn tokenizer_keeps_case_on_surface() {
    let s = tokenize("John McCain exposed").unwrap();
    assert_eq!(s.tokens[1].surface, "McCain");
    assert_eq!(s.tokens[1].norm, "mccain");
    let t = tokenize("john mccain exposed").unwrap();
    assert_eq!(token_diff(&s, &t).ops.len(), 1);
}
