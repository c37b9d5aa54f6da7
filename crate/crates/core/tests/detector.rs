use npov::detector::{
    bce, detection_loss, extract_features, feature_dim, load_lexicons, select_top_word,
    train_detector, Detector, DetectorConfig, DetectorInput, LabeledExample, Lexicon,
};
use npov::train::OptimConfig;
use npov::vocab::Vocab;
use npov::Error;
use npov_autograd::gradcheck::check_params;
use npov_autograd::{Graph, ParamStore, Real, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

const SENTENCES: &[(&str, &str, [usize; 1])] = &[
    ("the senator notoriously blocked the bill", "politics", [2]),
    ("critics say the film is a masterpiece", "arts", [6]),
    ("the striker heroically scored twice", "sports", [2]),
    ("the study clearly proved the theory", "science", [3]),
];

fn vocab() -> Vocab {
    let sents: Vec<Vec<String>> = SENTENCES.iter().map(|s| words(s.0)).collect();
    Vocab::build(
        sents.iter().map(Vec::as_slice),
        ["arts", "politics", "science", "sports"],
        100,
    )
}

fn lexicons() -> Vec<Lexicon> {
    vec![
        Lexicon::new("subjectives", &["masterpiece", "notoriously", "heroically"]),
        Lexicon::new("factives", &["proved"]),
    ]
}

fn small_cfg() -> DetectorConfig {
    DetectorConfig {
        dim: 8,
        feature_hidden: 6,
        layers: 1,
        dropout: 0.0,
        ..DetectorConfig::default()
    }
}

fn setup<T: Real>(seed: u64) -> (ParamStore<T>, Detector, Vocab) {
    let vocab = vocab();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let det = Detector::new(
        &mut store,
        "detector",
        vocab.len(),
        feature_dim(2),
        &small_cfg(),
        &mut rng,
    )
    .unwrap();
    (store, det, vocab)
}

fn examples(vocab: &Vocab) -> Vec<LabeledExample> {
    SENTENCES
        .iter()
        .map(|(s, c, hot)| {
            let w = words(s);
            let mut labels = vec![0u8; w.len()];
            labels[hot[0]] = 1;
            LabeledExample {
                input: DetectorInput::new(vocab, &lexicons(), &w, c),
                labels,
            }
        })
        .collect()
}

#[test]
fn lexicon_directory_loads_sorted_and_lowercased() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("hedges.txt"), "Perhaps\n\n  maybe \n").unwrap();
    std::fs::write(dir.path().join("assertives.txt"), "claim\n").unwrap();
    let lex = load_lexicons(dir.path()).unwrap();
    assert_eq!(
        lex.iter().map(|l| l.name.as_str()).collect::<Vec<_>>(),
        ["assertives", "hedges"]
    );
    assert!(lex[1].contains("perhaps") && lex[1].contains("maybe"));
    assert_eq!(lex[1].terms.len(), 2);

    std::fs::write(dir.path().join("empty.txt"), "\n").unwrap();
    assert!(matches!(load_lexicons(dir.path()), Err(Error::Lexicon(_))));
    assert!(load_lexicons(&dir.path().join("missing")).is_err());
}

#[test]
fn features_follow_the_neighbor_layout() {
    let lex = lexicons();
    let f = extract_features(&words("the film is a masterpiece"), &lex);
    assert_eq!(f.len(), 5);
    assert!(f.iter().all(|r| r.len() == feature_dim(2)));
    // masterpiece: own bit for lexicon 0, final-position bit
    assert_eq!(f[4], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    // a: right neighbor is in lexicon 0
    assert_eq!(f[3], [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    assert_eq!(f[0][6], 1.0);
}

#[test]
fn zero_parameters_give_one_half() {
    let (mut store, det, vocab) = setup::<f32>(0);
    for id in store.ids() {
        store.get_mut(id).value.data_mut().fill(0.0);
    }
    let ex = &examples(&vocab)[0];
    let p = det.detect(&store, &ex.input).unwrap();
    assert_eq!(p.len(), ex.labels.len());
    assert!(p.iter().all(|&x| (x - 0.5).abs() < 1e-12));
}

#[test]
fn one_probability_per_word_regardless_of_category() {
    let (store, det, vocab) = setup::<f32>(1);
    let w = words(SENTENCES[0].0);
    for cat in ["politics", "arts", "unseen-category"] {
        let input = DetectorInput::new(&vocab, &lexicons(), &w, cat);
        let p = det.detect(&store, &input).unwrap();
        assert_eq!(p.len(), w.len());
        assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }
    let empty = DetectorInput::new(&vocab, &lexicons(), &Vec::<String>::new(), "arts");
    assert!(det.detect(&store, &empty).is_err());
}

fn reference_bce(p: &[f64], y: &[u8]) -> f64 {
    let n = p.len() as f64;
    -p.iter()
        .zip(y)
        .map(|(p, &y)| if y == 1 { p.ln() } else { (1.0 - p).ln() })
        .sum::<f64>()
        / n
}

#[test]
fn loss_matches_the_direct_formula() {
    let cases: &[(&[f64], &[u8])] = &[
        (&[0.1, 0.8, 0.2], &[0, 1, 0]),
        (&[0.5, 0.5], &[1, 0]),
        (&[0.9, 0.05, 0.3, 0.6], &[1, 0, 0, 0]),
    ];
    let store = ParamStore::<f64>::new();
    for (p, y) in cases {
        let want = reference_bce(p, y);
        assert!((bce(p, y).unwrap() - want).abs() < 1e-12);
        let mut g = Graph::new(&store);
        let logits: Vec<f64> = p.iter().map(|p| (p / (1.0 - p)).ln()).collect();
        let logits = g.constant(Tensor::new(&[p.len(), 1], logits).unwrap());
        let l = detection_loss(&mut g, logits, y).unwrap();
        assert!((g.value(l).item() - want).abs() < 1e-9);
    }
    assert!((bce(&[0.5, 0.5], &[1, 0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(bce(&[0.5], &[1, 0]).is_err());
}

#[test]
fn logit_is_linear_in_the_contextual_weight() {
    let (mut store, det, vocab) = setup::<f64>(2);
    let ex = &examples(&vocab)[1];
    let logits = |store: &ParamStore<f64>| {
        let mut g = Graph::inference(store);
        let out = det.forward(&mut g, &ex.input).unwrap();
        g.value(out.logits).to_f64_vec()
    };
    let base = logits(&store);
    let original = store.get(det.w_b).value.clone();
    store.get_mut(det.w_b).value.data_mut().fill(0.0);
    let zero = logits(&store);
    let doubled: Vec<f64> = original.data().iter().map(|x| 2.0 * x).collect();
    store
        .get_mut(det.w_b)
        .value
        .data_mut()
        .copy_from_slice(&doubled);
    let twice = logits(&store);
    for i in 0..base.len() {
        let one = base[i] - zero[i];
        assert!((twice[i] - zero[i] - 2.0 * one).abs() < 1e-9);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (store, det, vocab) = setup::<f64>(3);
    let ex = examples(&vocab).remove(2);
    let err = check_params(&store, 1e-5, |g| {
        let out = det.forward(g, &ex.input).unwrap();
        Ok(detection_loss(g, out.logits, &ex.labels).unwrap())
    })
    .unwrap();
    assert!(err < 1e-3, "{err}");
}

fn train(seed: u64) -> (ParamStore<f32>, Detector, Vec<f64>) {
    let (mut store, det, vocab) = setup::<f32>(seed);
    let data = examples(&vocab);
    let cfg = OptimConfig {
        lr: 1e-2,
        batch: 2,
        seed,
        ..OptimConfig::default()
    };
    let report = train_detector(&mut store, &det, &data, 5, &cfg, |_, _| Ok(())).unwrap();
    (store, det, report.epoch_losses)
}

#[test]
fn training_lowers_the_loss_and_finds_the_marked_word() {
    let (store, det, losses) = train(4);
    assert_eq!(losses.len(), 5);
    assert!(losses[4] < losses[0], "{losses:?}");
    let vocab = vocab();
    let hits = examples(&vocab)
        .iter()
        .filter(|ex| {
            let p = det.detect(&store, &ex.input).unwrap();
            ex.labels[select_top_word(&p).unwrap()] == 1
        })
        .count();
    assert!(hits >= 3, "{hits} of 4");
}

#[test]
fn training_is_deterministic() {
    let (a, _, la) = train(5);
    let (b, _, lb) = train(5);
    assert_eq!(la, lb);
    for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
        assert_eq!(x.value.data(), y.value.data());
    }
}

proptest! {
    #[test]
    fn top_word_is_the_first_maximum(p in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let i = select_top_word(&p).unwrap();
        prop_assert!(p.iter().all(|&x| x <= p[i]));
        prop_assert!(p[..i].iter().all(|&x| x < p[i]));
    }
}

#[test]
fn top_word_ties_go_left() {
    assert_eq!(select_top_word(&[0.2, 0.7, 0.7]).unwrap(), 1);
    assert!(select_top_word(&[]).is_err());
}
