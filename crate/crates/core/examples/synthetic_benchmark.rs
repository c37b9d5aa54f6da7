//! Trains both systems on a generated corpus with planted bias markers and
//! reports detection, rewriting and steering quality on held-out pairs.
//!
//! cargo run --release -p npov --example synthetic_benchmark -- [run config JSON]

use std::time::Instant;

use npov::config::RunConfig;
use npov::evaluation::{detect_split, evaluate_system, exact_match_accuracy, EvalConfig};
use npov::pipeline::{synthetic_preset, train_synthetic};
use npov::systems::{Control, MergeRule};

fn main() -> anyhow::Result<()> {
    let (corpus, mut run) = synthetic_preset();
    if let Some(path) = std::env::args().nth(1) {
        run = RunConfig::from_json(&std::fs::read_to_string(path)?)?;
    }
    let start = Instant::now();
    let mut last = String::new();
    let mut progress = |stage: &str, step: usize, loss: f64| {
        if stage != last || step.is_multiple_of(250) {
            println!(
                "[{:>6.1}s] {stage:<10} step {step:>5} loss {loss:.4}",
                start.elapsed().as_secs_f64()
            );
            last = stage.to_string();
        }
    };
    let trained = train_synthetic(&corpus, &run, &mut progress)?;
    let test = &trained.corpus.test;

    let probs = detect_split(&trained.detector, test)?;
    let labels: Vec<Vec<u8>> = test.iter().map(|r| r.labels.clone()).collect();
    let top = npov::evaluation::detection_accuracy(&probs, &labels)?;
    println!("detector top-word accuracy {top:.3}");

    let probs = detect_split(&trained.modular, test)?;
    let joint = npov::evaluation::detection_accuracy(&probs, &labels)?;
    println!("fine-tuned system detector top-word accuracy {joint:.3}");

    let cfg = EvalConfig::default();
    for model in [&trained.modular, &trained.concurrent] {
        print!("{}", evaluate_system(model, test, &cfg)?.table());
        let outputs = npov::evaluation::decode_split(model, test)?.outputs;
        for (r, o) in test
            .iter()
            .zip(&outputs)
            .filter(|(r, o)| &r.tgt_tokens != *o)
            .take(3)
        {
            println!(
                "  src {}\n  tgt {}\n  out {}",
                r.src_raw,
                r.tgt_raw,
                o.join(" ")
            );
        }
    }

    let system = trained.modular.system().expect("system");
    let (mut targeted, mut silenced, mut refs, mut srcs) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in test {
        let marker = r.labels.iter().position(|&l| l == 1).expect("one marker");
        let mut on = vec![0.0; r.src_tokens.len()];
        on[marker] = 1.0;
        let off = vec![0.0; r.src_tokens.len()];
        for (control, out) in [(&on, &mut targeted), (&off, &mut silenced)] {
            let n = system.neutralize(
                &trained.modular.store,
                &trained.modular.vocab,
                trained.modular.lexicons(),
                &r.src_tokens,
                &r.category,
                Some(Control {
                    values: control,
                    merge: MergeRule::Replace,
                }),
                &trained.modular.meta.run.decode,
            )?;
            out.push(n.output);
        }
        refs.push(r.tgt_tokens.clone());
        srcs.push(r.src_tokens.clone());
    }
    println!(
        "control p=1 on marker -> planted edit  {:.3}",
        exact_match_accuracy(&targeted, &refs)?
    );
    println!(
        "control p=0 everywhere -> source copy  {:.3}",
        exact_match_accuracy(&silenced, &srcs)?
    );
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
