//! The bundled 20-revision fixture and its hand-derived expectations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use npov::corpus::{build_corpus, read_records, CorpusConfig, CorpusSplits, STATS_FILE};
use serde::Deserialize;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

#[derive(Deserialize)]
struct Expected {
    biased_full: Vec<(String, String, String)>,
    biased_word: Vec<(String, String, String)>,
    neutral: Vec<(String, String)>,
    rejects: BTreeMap<String, Vec<String>>,
    labels: BTreeMap<String, Vec<u8>>,
}

pub fn build_fixture() -> CorpusSplits {
    let (records, malformed) = read_records(&fixture_dir().join("revisions.jsonl")).unwrap();
    build_corpus(&records, malformed, &CorpusConfig::default())
}

/// Compares a build of the fixture against the expectations, returning the
/// first discrepancy.
pub fn check_fixture(out_a: &Path, out_b: &Path) -> Result<(), String> {
    let dir = fixture_dir();
    let expected: Expected =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let splits = build_fixture();
    let triples = |rows: &[npov::corpus::BiasedRecord]| -> Vec<(String, String, String)> {
        rows.iter()
            .map(|r| (r.rev_id.clone(), r.src_raw.clone(), r.tgt_raw.clone()))
            .collect()
    };
    if triples(&splits.biased_full) != expected.biased_full {
        return Err(format!("biased_full: {:?}", triples(&splits.biased_full)));
    }
    if triples(&splits.biased_word) != expected.biased_word {
        return Err(format!("biased_word: {:?}", triples(&splits.biased_word)));
    }
    let neutral: Vec<(String, String)> = splits
        .neutral
        .iter()
        .map(|r| (r.rev_id.clone(), r.raw.clone()))
        .collect();
    if neutral != expected.neutral {
        return Err(format!("neutral: {neutral:?}"));
    }
    let mut rejects: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &splits.rejects {
        rejects
            .entry(r.rev_id.clone())
            .or_default()
            .push(r.reason.as_str().to_string());
    }
    if rejects != expected.rejects {
        return Err(format!("rejects: {rejects:?}"));
    }
    for row in &splits.biased_full {
        if expected.labels.get(&row.rev_id) != Some(&row.labels) {
            return Err(format!("labels of {}: {:?}", row.rev_id, row.labels));
        }
    }
    splits.write(out_a).map_err(|e| e.to_string())?;
    build_fixture().write(out_b).map_err(|e| e.to_string())?;
    let golden = std::fs::read(dir.join("expected_stats.json")).unwrap();
    let stats = std::fs::read(out_a.join(STATS_FILE)).unwrap();
    if stats != golden {
        return Err(format!("stats.json:\n{}", String::from_utf8_lossy(&stats)));
    }
    for entry in std::fs::read_dir(out_a).unwrap() {
        let name = entry.unwrap().file_name();
        if std::fs::read(out_a.join(&name)).unwrap() != std::fs::read(out_b.join(&name)).unwrap() {
            return Err(format!("{name:?} differs between identical runs"));
        }
    }
    Ok(())
}
