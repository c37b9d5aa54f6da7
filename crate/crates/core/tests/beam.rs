use npov::beam::{beam_search, greedy, BeamConfig, MarkovModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [usize; 2] = [0, 1];
const END: usize = 2;
const START: usize = 3;
const MAX_LEN: usize = 4;

fn random_toy(seed: u64) -> MarkovModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = (0..4)
        .map(|_| {
            let row: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
            let z: f64 = row.iter().sum();
            row.iter().map(|p| (p / z).ln()).collect()
        })
        .collect();
    MarkovModel { table }
}

fn score(m: &MarkovModel, seq: &[usize]) -> f64 {
    let mut prev = START;
    let mut s = 0.0;
    for &t in seq {
        s += m.table[prev][t];
        prev = t;
    }
    s
}

/// Every sequence the search may return: up to three words then the end
/// token, or four words cut off by the length cap.
fn all_sequences() -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..MAX_LEN {
        frontier = frontier
            .iter()
            .flat_map(|p: &Vec<usize>| {
                WORDS.iter().map(move |&w| {
                    let mut q = p.clone();
                    q.push(w);
                    q
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out.into_iter()
        .map(|mut s| {
            if s.len() < MAX_LEN {
                s.push(END);
            }
            s
        })
        .collect()
}

fn exhaustive_best(m: &MarkovModel) -> (Vec<usize>, f64) {
    all_sequences()
        .into_iter()
        .map(|s| {
            let v = score(m, &s);
            (s, v)
        })
        .fold((Vec::new(), f64::NEG_INFINITY), |best, c| {
            if c.1 > best.1 {
                c
            } else {
                best
            }
        })
}

fn cfg(width: usize) -> BeamConfig {
    BeamConfig {
        width,
        max_len: MAX_LEN,
        start: START,
        end: END,
    }
}

#[test]
fn enumeration_covers_expected_count() {
    // 1 + 2 + 4 + 8 sequences ending in the end token, 16 cut at the cap
    assert_eq!(all_sequences().len(), 31);
}

#[test]
fn width_four_finds_exhaustive_argmax() {
    for seed in 0..50 {
        let mut m = random_toy(seed);
        let (seq, best) = exhaustive_best(&m);
        let hyp = beam_search(&mut m, (), &cfg(4)).unwrap();
        assert_eq!(hyp.tokens, seq, "seed {seed}");
        assert!((hyp.logprob - best).abs() < 1e-12, "seed {seed}");
        assert!((score(&m, &hyp.tokens) - hyp.logprob).abs() < 1e-12);
    }
}

#[test]
fn width_one_matches_greedy() {
    for seed in 0..50 {
        let mut m = random_toy(seed);
        let b = beam_search(&mut m, (), &cfg(1)).unwrap();
        let g = greedy(&mut m, (), &cfg(1)).unwrap();
        assert_eq!(b.tokens, g.tokens, "seed {seed}");
        assert_eq!(b.logprob, g.logprob, "seed {seed}");
    }
}

#[test]
fn wider_beams_never_score_below_greedy() {
    for seed in 0..50 {
        let mut m = random_toy(seed);
        let g = greedy(&mut m, (), &cfg(1)).unwrap();
        for width in 2..6 {
            let b = beam_search(&mut m, (), &cfg(width)).unwrap();
            assert!(b.logprob >= g.logprob - 1e-12);
        }
    }
}
