#[path = "common/corpus_fixture.rs"]
mod corpus_fixture;

use npov::corpus::{
    align_revision, align_sentences, apply_filters, build_corpus, check_pair, length_ratio_filter,
    split_sentences, AlignedPair, CorpusConfig, EditClass, RejectReason, RevisionPair,
};
use npov::text::{sentence_bleu, tokenize};
use proptest::prelude::*;

#[test]
fn fixture_matches_hand_derived_oracle() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    corpus_fixture::check_fixture(a.path(), b.path()).unwrap();
}

#[test]
fn fixture_paragraph_splits_into_four() {
    let doc =
        "Dr. Jones arrived at 9 a.m. on Monday. The meeting, chaired by J. R. Smith, ran long! \
               Was it productive? Nobody said \"yes.\" ";
    let got: Vec<String> = split_sentences(doc, true)
        .into_iter()
        .map(|s| s.raw)
        .collect();
    assert_eq!(
        got,
        [
            "Dr. Jones arrived at 9 a.m. on Monday.",
            "The meeting, chaired by J. R. Smith, ran long!",
            "Was it productive?",
            "Nobody said \"yes.\"",
        ]
    );
}

#[test]
fn single_changed_sentence_aligns_like_exhaustive_oracle() {
    let pre = split_sentences(
        "The sky is blue. Critics hated the awful film. Birds sing.",
        true,
    );
    let post = split_sentences(
        "The sky is blue. Critics disliked the film. Birds sing.",
        true,
    );
    // Exhaustive oracle: every assignment of pre to distinct post indices; the
    // greedy result must be the identity, which is also the unique maximizer.
    let score = |i: usize, j: usize| sentence_bleu(&pre[i], &post[j], 4);
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let best = perms
        .iter()
        .max_by(|a, b| {
            let sa: f64 = (0..3).map(|i| score(i, a[i])).sum();
            let sb: f64 = (0..3).map(|i| score(i, b[i])).sum();
            sa.total_cmp(&sb)
        })
        .unwrap();
    let got = align_sentences(&pre, &post, 5);
    assert_eq!(
        got.iter().map(|a| a.post).collect::<Vec<_>>(),
        best.to_vec()
    );
    assert!(got[1].score < 1.0 && got[0].score == 1.0 && got[2].score == 1.0);
}

#[test]
fn zero_overlap_sentence_is_not_aligned() {
    let rp = RevisionPair {
        rev_id: "x".into(),
        category: "c".into(),
        comment: String::new(),
        pre_text: "Alpha beta gamma. Delta epsilon zeta".into(),
        post_text: "Alpha beta gamma.".into(),
    };
    let (aligned, rejects) = align_revision(&rp, &CorpusConfig::default());
    assert_eq!(aligned.len(), 1);
    assert_eq!(rejects.len(), 1);
    assert_eq!(rejects[0].reason, RejectReason::NoAlignment);
}

fn pair(src: &str, tgt: &str) -> AlignedPair {
    AlignedPair {
        source: tokenize(src).unwrap(),
        target: tokenize(tgt).unwrap(),
        align_score: 1.0,
        rev_id: "r".into(),
        category: "c".into(),
        context_prev: None,
        context_next: None,
    }
}

#[test]
fn two_changed_sentences_reject_the_revision() {
    let out = apply_filters(
        vec![
            pair("Smith was a great leader.", "Smith was a leader."),
            pair(
                "His policies were disastrous.",
                "His policies were unpopular.",
            ),
        ],
        &CorpusConfig::default(),
    );
    assert!(out.kept.is_empty());
    assert!(out
        .rejects
        .iter()
        .all(|r| r.reason == RejectReason::MultiSentence));
    assert_eq!(out.rejects.len(), 2);
}

#[test]
fn length_ratio_examples() {
    let same: Vec<_> = (0..100).map(|_| pair("a b c", "a b d")).collect();
    let (kept, dropped) = length_ratio_filter(same, 95.0).unwrap();
    assert_eq!((kept.len(), dropped.len()), (100, 0));
    let mut mixed: Vec<_> = (0..99).map(|_| pair("a b c", "a b d")).collect();
    mixed.push(pair("a", "a b c d e"));
    let (kept, dropped) = length_ratio_filter(mixed, 95.0).unwrap();
    assert_eq!((kept.len(), dropped.len()), (99, 1));
    assert_eq!(dropped[0].target.len(), 5);
}

#[test]
fn identity_revisions_only_produce_neutral_sentences() {
    let records: Vec<RevisionPair> = (0..3)
        .map(|i| RevisionPair {
            rev_id: format!("id{i}"),
            category: "c".into(),
            comment: String::new(),
            pre_text: "Nothing changed here. Still the same.".into(),
            post_text: "Nothing changed here. Still the same.".into(),
        })
        .collect();
    let splits = build_corpus(&records, 0, &CorpusConfig::default());
    assert!(splits.biased_full.is_empty() && splits.biased_word.is_empty());
    assert_eq!(splits.neutral.len(), 6);
}

fn sentence() -> impl Strategy<Value = String> {
    let words = prop::sample::select(vec![
        "the",
        "critics",
        "claimed",
        "said",
        "brilliant",
        "film",
        "was",
        "a",
        "very",
        "good",
        "terrible",
        "Paris",
        "war",
        "government",
        "regime",
    ]);
    prop::collection::vec(words, 3..10).prop_map(|w| {
        let mut s = w.join(" ");
        let first = s.remove(0).to_ascii_uppercase();
        format!("{first}{s}.")
    })
}

fn revision() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    prop::collection::vec((sentence(), sentence(), any::<bool>()), 1..4).prop_map(|v| {
        let pre = v.iter().map(|(a, _, _)| a.clone()).collect();
        let post = v
            .iter()
            .map(|(a, b, edit)| if *edit { b.clone() } else { a.clone() })
            .collect();
        (pre, post)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pipeline_partitions_and_rechecks(revs in prop::collection::vec(revision(), 1..12)) {
        let cfg = CorpusConfig::default();
        let records: Vec<RevisionPair> = revs.iter().enumerate().map(|(i, (pre, post))| RevisionPair {
            rev_id: format!("r{i}"),
            category: "c".into(),
            comment: String::new(),
            pre_text: pre.join(" "),
            post_text: post.join(" "),
        }).collect();
        let splits = build_corpus(&records, 0, &cfg);
        let mut aligned_total = 0;
        for rp in &records {
            aligned_total += align_revision(rp, &cfg).0.len();
        }
        let aligned_rejects = splits.rejects.iter().filter(|r| r.reason != RejectReason::NoAlignment).count();
        prop_assert_eq!(aligned_total, splits.biased_full.len() + aligned_rejects);
        for w in &splits.biased_word {
            prop_assert!(splits.biased_full.contains(w));
            prop_assert_eq!(w.labels.iter().map(|&l| l as usize).sum::<usize>(), 1);
        }
        for row in &splits.biased_full {
            let p = pair(&row.src_raw, &row.tgt_raw);
            let (labels, class) = check_pair(&p, &cfg).unwrap();
            prop_assert_eq!(&labels, &row.labels);
            prop_assert_eq!(class == EditClass::SingleWord, splits.biased_word.contains(row));
        }
        if !splits.biased_word.is_empty() {
            prop_assert_eq!(splits.stats.biased_word.mean_revised_words, Some(1.0));
        }
        let again = build_corpus(&records, 0, &cfg);
        prop_assert_eq!(&again.biased_full, &splits.biased_full);
        prop_assert_eq!(&again.neutral, &splits.neutral);
    }
}
