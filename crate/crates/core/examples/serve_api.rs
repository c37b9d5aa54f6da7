//! Serves detection and steerable rewriting over HTTP.
//!
//! cargo run --release -p npov --example serve_api -- <checkpoint> [address]
//!
//! curl -s localhost:8080/api/detect -d '{"text": "the regime crushed a rival", "category": "politics"}'

use std::net::SocketAddr;
use std::path::Path;

use npov::model::{file_digest, Model};
use npov::service::{serve, ApiSession};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args
        .first()
        .ok_or_else(|| anyhow::anyhow!("usage: serve_api <checkpoint> [address]"))?;
    let addr: SocketAddr = args
        .get(1)
        .map_or("127.0.0.1:8080", String::as_str)
        .parse()?;
    let model = Model::load(Path::new(path))?;
    let session = ApiSession::new(model, file_digest(Path::new(path))?);
    println!("session {} on http://{addr}", session.id);
    tokio::runtime::Runtime::new()?.block_on(serve(session, addr))?;
    Ok(())
}
