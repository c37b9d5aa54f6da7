mod common;

use common::tiny::tiny_model;
use npov::model::{file_digest, Model};
use npov::systems::{DecodeConfig, JoinMode, Mode};
use npov::Error;
use npov_autograd::checkpoint::CheckpointError;

const PROBES: &[&str] = &[
    "the regime notorious said the team crushed a rival",
    "a brilliant study debunked the claim",
    "critics call the iconic film a masterpiece",
];

fn probe(model: &Model) -> Vec<(Vec<usize>, Vec<f64>)> {
    let system = model.system().unwrap();
    PROBES
        .iter()
        .map(|s| {
            let w: Vec<String> = s.split_whitespace().map(String::from).collect();
            let out = system
                .neutralize(
                    &model.store,
                    &model.vocab,
                    model.lexicons(),
                    &w,
                    "politics",
                    None,
                    &DecodeConfig::default(),
                )
                .unwrap();
            (out.output_ids, out.probabilities.unwrap_or_default())
        })
        .collect()
}

#[test]
fn round_trip_reproduces_outputs() {
    for mode in [Mode::Modular, Mode::Concurrent] {
        let (model, _) = tiny_model(mode, JoinMode::Gate);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.meta, model.meta);
        for ((a_ids, a_p), (b_ids, b_p)) in probe(&model).into_iter().zip(probe(&back)) {
            assert_eq!(a_ids, b_ids);
            for (x, y) in a_p.iter().zip(&b_p) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
        let d = file_digest(&path).unwrap();
        assert_eq!(d.len(), 64);
        model.save(&dir.path().join("again.ckpt")).unwrap();
        assert_eq!(
            file_digest(&dir.path().join("again.ckpt")).unwrap(),
            d,
            "saving is deterministic"
        );
    }
}

#[test]
fn truncated_file_is_rejected() {
    let (model, _) = tiny_model(Mode::Modular, JoinMode::Gate);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = Model::load(&path).unwrap_err();
    assert!(
        matches!(err, Error::Checkpoint(CheckpointError::Corrupt(_))),
        "{err}"
    );
}

#[test]
fn version_mismatch_names_both_versions() {
    let (model, _) = tiny_model(Mode::Modular, JoinMode::Gate);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[6..8].copy_from_slice(&9u16.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    let err = Model::load(&path).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(
        err,
        Error::Checkpoint(CheckpointError::Version {
            found: 9,
            expected: 1
        })
    ));
    assert!(msg.contains('9') && msg.contains('1'), "{msg}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = Model::load(std::path::Path::new("/nonexistent/m.ckpt")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}
