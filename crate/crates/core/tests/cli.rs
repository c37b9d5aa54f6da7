use std::path::Path;
use std::process::Command;

use npov::cli::run;
use npov::model::file_digest;

fn npov(args: &[&str]) -> i32 {
    run(std::iter::once("npov").chain(args.iter().copied()))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(npov(&["frobnicate"]), 2);
    assert_eq!(npov(&[]), 2);
    assert_eq!(npov(&["neutralize", "--model", "m.ckpt"]), 2);
    assert_eq!(npov(&["evaluate"]), 2);
    assert_eq!(
        npov(&["train", "--train", "t", "--out", "o", "--editor", "e"]),
        2
    );
    assert_eq!(npov(&["build-corpus", "--synthetic", "--out"]), 2);
}

#[test]
fn binary_names_the_missing_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_npov"))
        .args(["detect", "--text", "a b"])
        .env_remove("NEUTRALIZE_MODEL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));

    let out = Command::new(env!("CARGO_BIN_EXE_npov"))
        .arg("nope")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr)
        .to_lowercase()
        .contains("usage"));
}

#[test]
fn runtime_failures_print_one_prefixed_line() {
    let out = Command::new(env!("CARGO_BIN_EXE_npov"))
        .args(["detect", "--model", "/nonexistent.ckpt", "--text", "a b"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .find(|l| l.starts_with("error["))
        .expect("error line");
    assert!(line.starts_with("error[io]: "), "{line}");
}

#[test]
fn builds_the_corpus_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/corpus/revisions.jsonl"
    );
    assert_eq!(
        npov(&[
            "build-corpus",
            "--input",
            fixture,
            "--out",
            path(dir.path())
        ]),
        0
    );
    for f in [
        "biased_full.jsonl",
        "biased_word.jsonl",
        "neutral.jsonl",
        "stats.json",
        "vocab.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

const TINY_RUN: &str = r#"{
    "detector": {"dim": 8, "feature_hidden": 4, "layers": 1},
    "editor": {"embed": 8, "hidden": 8},
    "concurrent": {"dim": 8, "layers": 1},
    "mlm": {"steps": 2},
    "detector_training": {"epochs": 1},
    "pretraining": {"steps": 2},
    "fine_tuning": {"steps": 2},
    "decode": {"beam": 2, "extra_len": 3}
}"#;

#[test]
fn synthetic_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let cfg = d("run.json");
    std::fs::write(&cfg, TINY_RUN).unwrap();
    let data = d("data");
    let small = [
        "--train-pairs",
        "30",
        "--test-pairs",
        "5",
        "--neutral",
        "30",
    ];
    let mut build = vec!["build-corpus", "--synthetic", "--out", &data, "--seed", "4"];
    build.extend(small);
    assert_eq!(npov(&build), 0);
    let (train, test, neutral, vocab) = (
        format!("{data}/train.jsonl"),
        format!("{data}/test.jsonl"),
        format!("{data}/neutral.jsonl"),
        format!("{data}/vocab.txt"),
    );
    let common = ["--config", &cfg, "--vocab", &vocab, "--seed", "3"];

    let det = d("det.ckpt");
    let mut args = vec![
        "train-detector",
        "--train",
        &train,
        "--neutral",
        &neutral,
        "--out",
        &det,
    ];
    args.extend(common);
    assert_eq!(npov(&args), 0);

    let det2 = d("det2.ckpt");
    let mut args = vec![
        "train-detector",
        "--train",
        &train,
        "--neutral",
        &neutral,
        "--out",
        &det2,
    ];
    args.extend(common);
    assert_eq!(npov(&args), 0);
    assert_eq!(
        file_digest(Path::new(&det)).unwrap(),
        file_digest(Path::new(&det2)).unwrap(),
        "same seed, same artifact"
    );

    let ed = d("ed.ckpt");
    let mut args = vec![
        "pretrain-editor",
        "--neutral",
        &neutral,
        "--out",
        &ed,
        "--mode",
        "modular",
    ];
    args.extend(common);
    assert_eq!(npov(&args), 0);
    let conc = d("conc.ckpt");
    let mut args = vec![
        "pretrain-editor",
        "--neutral",
        &neutral,
        "--out",
        &conc,
        "--mode",
        "concurrent",
    ];
    args.extend(common);
    assert_eq!(npov(&args), 0);

    let sys = d("sys.ckpt");
    let args = [
        "train",
        "--corpus",
        &train,
        "--out",
        &sys,
        "--detector",
        &det,
        "--editor",
        &ed,
        "--config",
        &cfg,
        "--seed",
        "3",
        "--alpha",
        "1.3",
        "--beam",
        "2",
    ];
    assert_eq!(npov(&args), 0);
    let csys = d("csys.ckpt");
    let args = [
        "train",
        "--mode",
        "concurrent",
        "--train",
        &train,
        "--out",
        &csys,
        "--editor",
        &conc,
        "--config",
        &cfg,
    ];
    assert_eq!(npov(&args), 0);

    let text = "the regime opened a museum";
    assert_eq!(
        npov(&[
            "neutralize",
            "--model",
            &sys,
            "--text",
            text,
            "--category",
            "politics"
        ]),
        0
    );
    assert_eq!(
        npov(&[
            "neutralize",
            "--model",
            &sys,
            "--text",
            text,
            "--control",
            "1,0,0,0,0",
            "--merge",
            "max",
            "--json"
        ]),
        0
    );
    assert_eq!(
        npov(&[
            "neutralize",
            "--model",
            &sys,
            "--text",
            text,
            "--control",
            "1,0"
        ]),
        1
    );
    assert_eq!(npov(&["detect", "--model", &sys, "--text", text]), 0);
    assert_eq!(
        npov(&["detect", "--model", &det, "--text", text, "--json"]),
        0
    );
    assert_eq!(npov(&["detect", "--model", &csys, "--text", text]), 1);

    let report = d("report.jsonl");
    assert_eq!(
        npov(&[
            "evaluate",
            "--model",
            &sys,
            "--test",
            &test,
            "--out",
            &report,
            "--resamples",
            "20"
        ]),
        0
    );
    assert_eq!(
        npov(&[
            "evaluate",
            "--baseline",
            "source-copy",
            "--test",
            &test,
            "--out",
            &report,
            "--resamples",
            "20"
        ]),
        0
    );
    assert_eq!(npov(&["evaluate", "--model", &det, "--test", &test]), 0);
    let lines = std::fs::read_to_string(&report).unwrap();
    assert_eq!(lines.lines().count(), 4 + 3);
}
