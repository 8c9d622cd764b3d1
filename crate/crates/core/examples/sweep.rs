//! Sweep the slack factor α over a few seeds and print mean accuracies.
//!
//!     cargo run --release --example sweep

use std::path::Path;

use slackfed::sweep::summarize;
use slackfed::{run_sweep, ExperimentConfig, SweepParam};

fn main() -> slackfed::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/sfat.toml");
    let mut cfg = ExperimentConfig::from_file(&path)?;
    cfg.rounds = 20;
    let points = run_sweep(&cfg, SweepParam::Alpha, &[0.0, 1.0 / 6.0, 0.3], 2)?;
    println!("alpha   natural  fgsm   pgd20  late drift");
    for (alpha, acc, drift) in summarize(&points) {
        println!("{alpha:<7.3} {:.3}    {:.3}  {:.3}  {drift:.4}", acc.natural, acc.fgsm, acc.pgd20);
    }
    Ok(())
}
