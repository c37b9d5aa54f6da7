//! Rewrites a sentence three ways: as the detector sees it, with every word
//! switched off, and with a single word forced on.
//!
//! cargo run --release -p npov --example steer_rewrite -- [system checkpoint] [text] [category]
//!
//! Without a checkpoint a modular system is trained on a generated corpus
//! first, which takes about four minutes on one core.

use std::path::Path;

use npov::detector::bundled_lexicons;
use npov::model::Model;
use npov::pipeline::{
    assemble, build_vocab, fine_tune_model, pretrain_editor_model, synthetic_preset,
    train_detector_model,
};
use npov::synthetic::generate;
use npov::systems::{Control, MergeRule, Mode};

fn trained_system() -> anyhow::Result<Model> {
    let (data, run) = synthetic_preset();
    let corpus = generate(&data);
    let vocab = build_vocab(&corpus.train, &corpus.neutral, run.vocab_cap);
    let mut last = String::new();
    let mut progress = |stage: &str, step: usize, loss: f64| {
        if stage != last {
            println!("{stage} (loss {loss:.3} at step {step})");
            last = stage.to_string();
        }
    };
    let (detector, _) = train_detector_model(
        vocab.clone(),
        bundled_lexicons(),
        &corpus.train,
        &corpus.neutral,
        &run,
        &mut progress,
    )?;
    let (editor, _) = pretrain_editor_model(
        vocab,
        bundled_lexicons(),
        &corpus.neutral,
        Mode::Modular,
        &run,
        &mut progress,
    )?;
    let mut model = assemble(&run, &[&detector, &editor])?;
    fine_tune_model(&mut model, &corpus.train, &mut progress)?;
    Ok(model)
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = match args.first() {
        Some(path) => Model::load(Path::new(path))?,
        None => trained_system()?,
    };
    let text = args.get(1).map_or(
        "critics said the regime crushed a local festival",
        String::as_str,
    );
    let category = args.get(2).map_or("politics", String::as_str);
    let words: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
    let system = model
        .system()
        .ok_or_else(|| anyhow::anyhow!("not a system checkpoint"))?;
    let decode = model.meta.run.decode;
    let rewrite = |control: Option<Control>| {
        system.neutralize(
            &model.store,
            &model.vocab,
            model.lexicons(),
            &words,
            category,
            control,
            &decode,
        )
    };

    let free = rewrite(None)?;
    if let Some(p) = &free.detector {
        for (w, p) in words.iter().zip(p) {
            println!("  {w:<14} {p:.3}");
        }
    }
    println!("detector-steered  {}", free.output.join(" "));
    let off = vec![0.0; words.len()];
    let out = rewrite(Some(Control {
        values: &off,
        merge: MergeRule::Replace,
    }))?;
    println!("all words off     {}", out.output.join(" "));
    for i in 0..words.len() {
        let mut on = off.clone();
        on[i] = 1.0;
        let out = rewrite(Some(Control {
            values: &on,
            merge: MergeRule::Replace,
        }))?;
        println!("force {:<11} {}", words[i], out.output.join(" "));
    }
    Ok(())
}
