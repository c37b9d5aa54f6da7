//! Pretrains the copy-attention editor as a denoising autoencoder and shows
//! corrupted inputs next to their reconstructions.
//!
//! cargo run --release -p npov --example denoising_autoencoder -- [steps]

use npov::beam::BeamConfig;
use npov::editor::{
    beam_decode, corrupt, pretrain_autoencoder, reconstruction_accuracy, CopySource, Editor,
    EditorConfig, LossConfig, NoiseConfig, PRETRAIN_LR,
};
use npov::train::OptimConfig;
use npov::vocab::{Vocab, EOS, SOS};
use npov_autograd::{Graph, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(500);
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/autoencoder/sentences.txt"
    ))?;
    let corpus: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect();
    let vocab = Vocab::build(corpus.iter().map(Vec::as_slice), [], 1000);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let editor = Editor::new(
        &mut store,
        "editor",
        vocab.len(),
        &EditorConfig::default(),
        &mut rng,
    )?;
    let optim = OptimConfig {
        lr: PRETRAIN_LR,
        ..OptimConfig::default()
    };
    let noise = NoiseConfig::default();
    let report = pretrain_autoencoder(
        &mut store,
        &editor,
        &vocab,
        &corpus,
        &[],
        &noise,
        &LossConfig::default(),
        steps,
        &optim,
        |step, loss, _| {
            if step % 100 == 0 {
                println!("step {step:>4} loss {loss:.4}");
            }
            Ok(())
        },
    )?;
    println!(
        "final loss {:.4}",
        report.losses.last().copied().unwrap_or(f64::NAN)
    );
    println!(
        "reconstruction accuracy {:.4}",
        reconstruction_accuracy(&store, &editor, &vocab, &corpus, &[])?
    );

    for s in corpus.iter().take(3) {
        let noisy = corrupt(s, &noise, &mut rng).tokens;
        let src = vocab.encode_source(&noisy);
        let mut g = Graph::inference(&store);
        let enc = editor.encode(&mut g, &src.ids, 0.0)?;
        let beam = BeamConfig {
            width: 4,
            max_len: noisy.len() + 10,
            start: SOS,
            end: EOS,
        };
        let hyp = beam_decode(&mut g, &editor.decoder, enc, CopySource::from(&src), &beam)?;
        let out: Vec<String> = hyp
            .content(EOS)
            .iter()
            .map(|&id| vocab.decode_ext(id, &src))
            .collect();
        println!(
            "  noisy {}\n  clean {}\n  out   {}",
            noisy.join(" "),
            s.join(" "),
            out.join(" ")
        );
    }
    Ok(())
}
