use npov::config::RunConfig;
use npov::detector::bundled_lexicons;
use npov::model::{Model, ModelKind};
use npov::pipeline::build_vocab;
use npov::synthetic::{generate, SyntheticConfig, SyntheticCorpus};
use npov::systems::{JoinMode, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_corpus() -> SyntheticCorpus {
    generate(&SyntheticConfig {
        train_pairs: 40,
        test_pairs: 10,
        neutral: 40,
        seed: 3,
        ..SyntheticConfig::default()
    })
}

pub fn tiny_run(mode: Mode, join: JoinMode) -> RunConfig {
    let mut run = RunConfig::default().with_seed(1);
    run.mode = mode;
    run.join = join;
    run.detector.dim = 12;
    run.detector.feature_hidden = 8;
    run.detector.layers = 1;
    run.editor.embed = 10;
    run.editor.hidden = 12;
    run.concurrent.dim = 12;
    run.concurrent.layers = 1;
    run.mlm.steps = 0;
    run.fine_tuning.optim.batch = 4;
    run
}

/// An untrained system whose join vector is random rather than zero.
pub fn tiny_model(mode: Mode, join: JoinMode) -> (Model, SyntheticCorpus) {
    let corpus = tiny_corpus();
    let vocab = build_vocab(&corpus.train, &corpus.neutral, 1000);
    let mut model = Model::new(
        ModelKind::System,
        tiny_run(mode, join),
        vocab,
        bundled_lexicons(),
    )
    .unwrap();
    if let Some(id) = model.store.id("join.v") {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in model.store.get_mut(id).value.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    (model, corpus)
}
