//! Write a run to disk, read `metrics.csv` back, and count how often each
//! client was among the up-weighted ones.
//!
//!     cargo run --release --example trace_topk [OUT_DIR]

use std::path::{Path, PathBuf};

use slackfed::report::topk_histogram;
use slackfed::{read_metrics, run_to_dir, ExperimentConfig};

fn main() -> slackfed::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/sfat.toml");
    let mut cfg = ExperimentConfig::from_file(&path)?;
    cfg.rounds = 50;
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("slackfed-trace-topk"));

    run_to_dir(&cfg, &out)?;
    let rows = read_metrics(&out.join("metrics.csv"))?;
    println!("metrics written to {}", out.display());
    for (client, hits) in topk_histogram(&rows).into_iter().enumerate() {
        println!("client {client}: {hits:>3} {}", "#".repeat(hits));
    }
    let xi: Vec<i64> = rows.iter().filter(|r| r.is_aggregate()).filter_map(|r| r.xi).collect();
    println!("xi over rounds: {xi:?}");
    Ok(())
}
