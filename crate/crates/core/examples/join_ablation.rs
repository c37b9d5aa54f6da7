//! Fine-tunes the modular system twice from the same pretrained parts, once
//! with the gated join and once with the frozen-detector concatenation, and
//! reports both on one test split.
//!
//! cargo run --release -p npov --example join_ablation -- [fine-tune steps]

use npov::detector::bundled_lexicons;
use npov::evaluation::EvalConfig;
use npov::pipeline::{
    build_vocab, concat_ablation, pretrain_editor_model, synthetic_preset, train_detector_model,
};
use npov::synthetic::generate;
use npov::systems::Mode;

fn main() -> anyhow::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1000);
    let (data, mut run) = synthetic_preset();
    let corpus = generate(&data);
    run.fine_tuning.steps = Some(steps);
    let vocab = build_vocab(&corpus.train, &corpus.neutral, run.vocab_cap);
    let lexicons = bundled_lexicons();
    let mut quiet = |_: &str, _: usize, _: f64| {};
    let (detector, _) = train_detector_model(
        vocab.clone(),
        lexicons.clone(),
        &corpus.train,
        &corpus.neutral,
        &run,
        &mut quiet,
    )?;
    let (editor, _) = pretrain_editor_model(
        vocab,
        lexicons,
        &corpus.neutral,
        Mode::Modular,
        &run,
        &mut quiet,
    )?;
    let ablation = concat_ablation(
        &run,
        &detector,
        &editor,
        &corpus.train,
        &corpus.test,
        &EvalConfig::default(),
        &mut quiet,
    )?;
    print!("{}", ablation.table());
    Ok(())
}
