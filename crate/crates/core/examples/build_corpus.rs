//! Builds the bias corpus from a revision stream and prints its statistics.
//!
//! cargo run -p npov --example build_corpus -- [revisions.jsonl] [output dir]

use std::path::PathBuf;

use npov::corpus::{build_corpus, read_records, write_jsonl, CorpusConfig};

fn main() -> anyhow::Result<()> {
    let input = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/tests/fixtures/corpus/revisions.jsonl"
            ))
        });
    let (records, malformed) = read_records(&input)?;
    let splits = build_corpus(&records, malformed, &CorpusConfig::default());

    for r in splits.biased_word.iter().take(3) {
        println!(
            "{}\n  - {}\n  + {}\n  labels {:?}",
            r.rev_id, r.src_raw, r.tgt_raw, r.labels
        );
    }
    for r in splits.rejects.iter().take(5) {
        println!("rejected {} ({:?})", r.rev_id, r.reason);
    }
    println!("{}", serde_json::to_string_pretty(&splits.stats)?);

    if let Some(out) = std::env::args().nth(2).map(PathBuf::from) {
        std::fs::create_dir_all(&out)?;
        write_jsonl(&out.join("biased_word.jsonl"), &splits.biased_word)?;
        write_jsonl(&out.join("biased_full.jsonl"), &splits.biased_full)?;
        write_jsonl(&out.join("neutral.jsonl"), &splits.neutral)?;
        println!("wrote splits to {}", out.display());
    }
    Ok(())
}
