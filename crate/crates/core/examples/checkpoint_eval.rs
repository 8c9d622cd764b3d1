//! Save a trained global model, load it back, and evaluate it on exported
//! test data, as the `eval` subcommand does.
//!
//!     cargo run --release --example checkpoint_eval

use std::path::Path;

use slackfed::data::{load_csv, save_csv};
use slackfed::report::{read_checkpoint_file, write_checkpoint_file};
use slackfed::{evaluate, EvalAttack, ExperimentConfig, Mlp, Simulation};

fn main() -> slackfed::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/sfat.toml");
    let mut cfg = ExperimentConfig::from_file(&path)?;
    cfg.rounds = 10;
    let sim = Simulation::new(cfg)?;
    let artifact = sim.run()?;

    let dir = std::env::temp_dir().join("slackfed-checkpoint-eval");
    std::fs::create_dir_all(&dir).map_err(|e| slackfed::Error::io(&dir, e))?;
    write_checkpoint_file(&artifact.final_params, &dir.join("final.ckpt"))?;
    save_csv(&sim.test, &dir.join("test.csv"))?;

    let model = Mlp::from_params(read_checkpoint_file(&dir.join("final.ckpt"))?)?;
    let test = load_csv(&dir.join("test.csv"))?;
    assert_eq!(model.params(), &artifact.final_params);
    let attack = artifact.config.eval_attack();
    println!("natural {:.3}", evaluate(&model, &test, EvalAttack::None, 0)?);
    println!("pgd20   {:.3}", evaluate(&model, &test, EvalAttack::Pgd(attack.with_steps(20)), 0)?);
    Ok(())
}
