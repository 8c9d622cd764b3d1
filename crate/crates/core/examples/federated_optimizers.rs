//! The same skewed task under FedAvg, FedProx and Scaffold client updates,
//! each with slack aggregation on the server.
//!
//!     cargo run --release --example federated_optimizers

use std::path::Path;

use slackfed::{run, ExperimentConfig, FedOptimizer};

fn main() -> slackfed::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/sfat.toml");
    let base = ExperimentConfig::from_file(&path)?;
    for optimizer in [FedOptimizer::FedAvg, FedOptimizer::FedProx { mu: 0.01 }, FedOptimizer::Scaffold] {
        let cfg = ExperimentConfig {
            optimizer,
            ..base.clone()
        };
        let artifact = run(&cfg)?;
        let acc = artifact.last_accuracy().expect("last round is evaluated");
        println!(
            "{:<28} natural {:.3}  pgd20 {:.3}  late drift {:.4}",
            format!("{optimizer:?}"),
            acc.natural,
            acc.pgd20,
            artifact.late_drift()
        );
    }
    Ok(())
}
