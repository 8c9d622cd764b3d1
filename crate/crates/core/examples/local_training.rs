//! One client's local round with standard, PGD adversarial and TRADES
//! training, starting from the same global model.
//!
//!     cargo run --release --example local_training

use slackfed::data::{make_synthetic, SyntheticSpec};
use slackfed::local::RoundContext;
use slackfed::rng::{stream, Purpose};
use slackfed::{partition, train_local, LocalConfig, Mlp, PartitionSpec, Trainer};

fn main() -> slackfed::Result<()> {
    let data = make_synthetic(&SyntheticSpec {
        n_per_class: 60,
        classes: 5,
        dim: 8,
        separation: 1.0,
        spread: 0.12,
        seed: 1,
    })?;
    let shards = partition(&data, &PartitionSpec::non_iid(5, 5.0, 1))?;
    let global = Mlp::new(&[8, 16, 5], &mut stream(1, Purpose::Init, &[]))?;
    let ctx = RoundContext {
        seed: 1,
        round: 1,
        total_samples: data.len(),
        control: None,
    };

    for trainer in [Trainer::Standard, Trainer::At, Trainer::Trades] {
        let config = LocalConfig {
            epochs: 3,
            trainer,
            ..LocalConfig::default()
        };
        let update = train_local(&data, &shards[0], &global, &config, &ctx)?;
        let drift = update.params.sub(global.params())?.norm_sq().sqrt();
        println!(
            "{trainer:?}: epoch losses {:?}  weighted loss {:.4}  steps {}  distance from global {drift:.6}",
            update.epoch_losses.iter().map(|l| (l * 1e4).round() / 1e4).collect::<Vec<_>>(),
            update.weighted_loss,
            update.local_steps
        );
    }
    Ok(())
}
