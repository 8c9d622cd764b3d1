//! Run SFAT and its FedAvg-style baseline on the bundled synthetic config and
//! compare final accuracies and late-round client drift.
//!
//!     cargo run --release --example quickstart

use std::path::Path;

use slackfed::aggregate::AggregationMode;
use slackfed::{run, ExperimentConfig};

fn main() -> slackfed::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/sfat.toml");
    let sfat = ExperimentConfig::from_file(&path)?;
    let mut fat = sfat.clone();
    fat.aggregation.mode = AggregationMode::Fat;

    println!("{:<6} {:>8} {:>8} {:>8} {:>11}", "mode", "natural", "fgsm", "pgd20", "late drift");
    for (name, cfg) in [("FAT", &fat), ("SFAT", &sfat)] {
        let artifact = run(cfg)?;
        let acc = artifact.last_accuracy().expect("last round is always evaluated");
        println!(
            "{name:<6} {:>8.3} {:>8.3} {:>8.3} {:>11.4}",
            acc.natural,
            acc.fgsm,
            acc.pgd20,
            artifact.late_drift()
        );
    }
    Ok(())
}
