//! Scores the copy baselines on a generated test split with bootstrap
//! confidence intervals, and compares two sets of per-sentence outcomes.
//!
//! cargo run -p npov --example evaluate_baselines

use npov::evaluation::{
    accuracy_difference, baseline_outputs, evaluate_baseline, exact_matches, Baseline, EvalConfig,
};
use npov::synthetic::{generate, SyntheticConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate(&SyntheticConfig::default());
    let cfg = EvalConfig::default();
    for baseline in [Baseline::SourceCopy, Baseline::TargetCopy] {
        print!(
            "{}",
            evaluate_baseline(baseline, &corpus.test, &cfg)?.table()
        );
    }

    // a system that fixes every other sentence against one that fixes none
    let refs: Vec<Vec<String>> = corpus.test.iter().map(|r| r.tgt_tokens.clone()).collect();
    let copy = baseline_outputs(Baseline::SourceCopy, &corpus.test);
    let half: Vec<Vec<String>> = copy
        .iter()
        .zip(&refs)
        .enumerate()
        .map(|(i, (c, r))| if i % 2 == 0 { r.clone() } else { c.clone() })
        .collect();
    let a = exact_matches(&half, &refs)?;
    let b = exact_matches(&copy, &refs)?;
    let d = accuracy_difference(&a, &b, &cfg)?;
    println!(
        "accuracy difference {:.3} [{:.3}, {:.3}]",
        d.value, d.ci.low, d.ci.high
    );
    let same = accuracy_difference(&a, &a, &cfg)?;
    println!(
        "against itself      {:.3} [{:.3}, {:.3}]",
        same.value, same.ci.low, same.ci.high
    );
    Ok(())
}
