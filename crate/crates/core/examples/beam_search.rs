//! Beam search over a two-word Markov toy, checked against brute force.
//!
//! cargo run -p npov --example beam_search

use npov::beam::{beam_search, greedy, BeamConfig, MarkovModel};

fn main() -> anyhow::Result<()> {
    // rows: previous token (a, b, end, start); columns: next token (a, b, end)
    let table = [
        [0.1, 0.6, 0.3],
        [0.5, 0.1, 0.4],
        [1.0, 1.0, 1.0],
        [0.55, 0.45, 0.0],
    ]
    .iter()
    .map(|row| row.iter().map(|p: &f64| p.max(1e-9).ln()).collect())
    .collect();
    let mut model = MarkovModel { table };
    let names = ["a", "b", "<end>"];
    let show = |tokens: &[usize]| {
        tokens
            .iter()
            .map(|&t| names[t])
            .collect::<Vec<_>>()
            .join(" ")
    };
    for width in 1..=4 {
        let cfg = BeamConfig {
            width,
            max_len: 4,
            start: 3,
            end: 2,
        };
        let hyp = beam_search(&mut model, (), &cfg)?;
        println!(
            "width {width}: {:<18} log p {:.4}",
            show(&hyp.tokens),
            hyp.logprob
        );
    }
    let g = greedy(
        &mut model,
        (),
        &BeamConfig {
            width: 1,
            max_len: 4,
            start: 3,
            end: 2,
        },
    )?;
    println!("greedy:  {:<18} log p {:.4}", show(&g.tokens), g.logprob);
    Ok(())
}
