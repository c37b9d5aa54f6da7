//! Trains the word-level bias detector on a generated corpus and shows the
//! probability it assigns to every word of a few held-out sentences.
//!
//! cargo run --release -p npov --example detect_bias

use npov::detector::{bundled_lexicons, select_top_word, DetectorInput};
use npov::evaluation::{detect_split, detection_accuracy};
use npov::model::Architecture;
use npov::pipeline::{build_vocab, synthetic_preset, train_detector_model};
use npov::synthetic::generate;

fn main() -> anyhow::Result<()> {
    let (data, run) = synthetic_preset();
    let corpus = generate(&data);
    let vocab = build_vocab(&corpus.train, &corpus.neutral, run.vocab_cap);
    let (model, report) = train_detector_model(
        vocab,
        bundled_lexicons(),
        &corpus.train,
        &corpus.neutral,
        &run,
        &mut |_, _, _| {},
    )?;
    println!("epoch losses {:.4?}", report.epoch_losses);

    let Architecture::Detector(detector) = &model.arch else {
        unreachable!("detector checkpoint")
    };
    for r in corpus.test.iter().take(4) {
        let input = DetectorInput::new(&model.vocab, model.lexicons(), &r.src_tokens, &r.category);
        let p = detector.detect(&model.store, &input)?;
        let top = select_top_word(&p)?;
        println!("[{}] top word {:?}", r.category, r.src_tokens[top]);
        for (w, p) in r.src_tokens.iter().zip(&p) {
            println!(
                "  {w:<16} {p:.3} {}",
                "#".repeat((p * 40.0).round() as usize)
            );
        }
    }

    let probs = detect_split(&model, &corpus.test)?;
    let labels: Vec<Vec<u8>> = corpus.test.iter().map(|r| r.labels.clone()).collect();
    println!(
        "held-out top-word accuracy {:.3}",
        detection_accuracy(&probs, &labels)?
    );
    Ok(())
}
