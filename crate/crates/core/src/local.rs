//! One communication round of client-side training.
//!
//! A client starts from the broadcast global model with a fresh momentum
//! buffer, runs `epochs` passes of minibatch SGD over its shard and reports
//! its parameters together with the mean training loss of the final epoch.
//! Adversarial examples are crafted against the current local model using a
//! stream keyed by `(round, client, batch, position)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::{pgd, pgd_kl, AttackSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, kl_divergence, sgd_step, Mlp, ParamVector, SgdConfig, SgdState};
use crate::partition::ClientShard;
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trainer {
    /// Natural examples only.
    Standard,
    /// Cross-entropy on PGD examples.
    At,
    /// Natural cross-entropy plus β·KL toward KL-maximizing examples.
    Trades,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub trainer: Trainer,
    #[serde(default = "default_trades_beta")]
    pub trades_beta: f64,
    #[serde(default)]
    pub fedprox_mu: f64,
    #[serde(default)]
    pub scaffold: bool,
    pub attack: AttackSpec,
    pub sgd: SgdConfig,
}

fn default_trades_beta() -> f64 {
    6.0
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        if !(self.trades_beta >= 0.0) {
            return Err(Error::Config(format!("TRADES beta {} < 0", self.trades_beta)));
        }
        if !(self.fedprox_mu >= 0.0) {
            return Err(Error::Config(format!("FedProx mu {} < 0", self.fedprox_mu)));
        }
        self.attack.validate()?;
        self.sgd.validate()
    }
}

/// Scaffold control variates handed to a client for one round.
#[derive(Debug, Clone, Copy)]
pub struct ControlVariates<'a> {
    pub global: &'a ParamVector,
    pub local: &'a ParamVector,
}

/// Everything about the round a client needs besides its data and config.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub seed: u64,
    pub round: usize,
    /// Total sample count over the clients taking part in this round.
    pub total_samples: usize,
    pub control: Option<ControlVariates<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldUpdate {
    /// The client's refreshed control variate.
    pub control: ParamVector,
    /// `control - previous control`, consumed by the server.
    pub delta: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    pub params: ParamVector,
    /// Mean training loss over the final local epoch.
    pub loss: f64,
    pub n: usize,
    /// `n / total_samples * loss`
    pub weighted_loss: f64,
    /// Mean loss of every local epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub local_steps: usize,
    pub scaffold: Option<ScaffoldUpdate>,
}

impl ClientUpdate {
    /// An update that did not come from local training, e.g. for replaying
    /// logged results through the server step.
    pub fn new(client: usize, params: ParamVector, n: usize, loss: f64, total_samples: usize) -> Self {
        ClientUpdate {
            client,
            params,
            loss,
            n,
            weighted_loss: n as f64 / total_samples as f64 * loss,
            epoch_losses: vec![loss],
            local_steps: 0,
            scaffold: None,
        }
    }
}

/// `grads + μ (θ_local - θ_global)`
pub fn apply_fedprox(grads: &mut ParamVector, local: &ParamVector, global: &ParamVector, mu: f64) -> Result<()> {
    grads.check_layout(local)?;
    grads.check_layout(global)?;
    if mu == 0.0 {
        return Ok(());
    }
    for ((g, l), w) in grads.values_mut().iter_mut().zip(local.values()).zip(global.values()) {
        *g += mu * (l - w);
    }
    Ok(())
}

/// `grads - c_local + c_global`
pub fn apply_scaffold(grads: &mut ParamVector, c_global: &ParamVector, c_local: &ParamVector) -> Result<()> {
    grads.check_layout(c_global)?;
    grads.check_layout(c_local)?;
    for ((g, cg), cl) in grads.values_mut().iter_mut().zip(c_global.values()).zip(c_local.values()) {
        *g += cg - cl;
    }
    Ok(())
}

/// Scaffold's second-option variate refresh:
/// `c_local - c_global + (θ_global - θ_local) / (steps · lr)`.
pub fn update_scaffold_client(
    global: &ParamVector,
    local: &ParamVector,
    steps: usize,
    lr: f64,
    c_local: &ParamVector,
    c_global: &ParamVector,
) -> Result<ParamVector> {
    global.check_layout(local)?;
    global.check_layout(c_local)?;
    global.check_layout(c_global)?;
    let denom = steps as f64 * lr;
    let values = global
        .values()
        .iter()
        .zip(local.values())
        .zip(c_local.values().iter().zip(c_global.values()))
        .map(|((g, l), (cl, cg))| cl - cg + (g - l) / denom)
        .collect();
    ParamVector::new(values, global.layout().clone())
}

/// Adversarial training round (PGD examples).
pub fn train_at(
    dataset: &Dataset,
    shard: &ClientShard,
    global: &Mlp,
    config: &LocalConfig,
    ctx: &RoundContext<'_>,
) -> Result<ClientUpdate> {
    let config = LocalConfig {
        trainer: Trainer::At,
        ..config.clone()
    };
    train_local(dataset, shard, global, &config, ctx)
}

/// TRADES round.
pub fn train_trades(
    dataset: &Dataset,
    shard: &ClientShard,
    global: &Mlp,
    config: &LocalConfig,
    ctx: &RoundContext<'_>,
) -> Result<ClientUpdate> {
    let config = LocalConfig {
        trainer: Trainer::Trades,
        ..config.clone()
    };
    train_local(dataset, shard, global, &config, ctx)
}

/// Per-sample loss and its contribution to the batch gradient.
fn sample_step(
    model: &Mlp,
    x: &[f64],
    y: usize,
    config: &LocalConfig,
    rng: &mut crate::rng::StreamRng,
    grad_acc: &mut [f64],
    scale: f64,
) -> Result<f64> {
    match config.trainer {
        Trainer::Standard => {
            let tape = model.forward_tape(x)?;
            let (loss, d) = cross_entropy(tape.logits(), y)?;
            model.backward_into(&tape, &d, grad_acc, scale);
            Ok(loss)
        }
        Trainer::At => {
            let adv = pgd(model, x, y, &config.attack, rng)?;
            let tape = model.forward_tape(&adv)?;
            let (loss, d) = cross_entropy(tape.logits(), y)?;
            model.backward_into(&tape, &d, grad_acc, scale);
            Ok(loss)
        }
        Trainer::Trades => {
            let beta = config.trades_beta;
            let nat = model.forward_tape(x)?;
            let (ce, mut d_nat) = cross_entropy(nat.logits(), y)?;
            if beta == 0.0 {
                model.backward_into(&nat, &d_nat, grad_acc, scale);
                return Ok(ce);
            }
            let adv = pgd_kl(model, x, nat.logits(), &config.attack, rng)?;
            let adv_tape = model.forward_tape(&adv)?;
            let (kl, g_nat, g_adv) = kl_divergence(nat.logits(), adv_tape.logits());
            for (d, g) in d_nat.iter_mut().zip(&g_nat) {
                *d += beta * g;
            }
            let d_adv: Vec<f64> = g_adv.iter().map(|g| beta * g).collect();
            model.backward_into(&nat, &d_nat, grad_acc, scale);
            model.backward_into(&adv_tape, &d_adv, grad_acc, scale);
            Ok(ce + beta * kl)
        }
    }
}

/// Runs the configured trainer for one round.
pub fn train_local(
    dataset: &Dataset,
    shard: &ClientShard,
    global: &Mlp,
    config: &LocalConfig,
    ctx: &RoundContext<'_>,
) -> Result<ClientUpdate> {
    if shard.indices.is_empty() {
        return Err(Error::EmptyShard { client: shard.id });
    }
    config.validate()?;
    let client = shard.id;
    let diverged = |reason: String| Error::ClientDivergence { client, reason };

    let mut model = global.clone();
    let mut opt = SgdState::new(config.sgd.clone(), model.layout().clone());
    let mut order = shard.indices.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch_counter = 0u64;
    let mut steps = 0usize;

    for epoch in 0..config.epochs {
        order.clone_from(&shard.indices);
        order.shuffle(&mut stream(
            ctx.seed,
            Purpose::Shuffle,
            &[ctx.round as u64, client as u64, epoch as u64],
        ));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.params().zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for (pos, &i) in batch.iter().enumerate() {
                let (x, y) = dataset.get(i);
                let mut rng = stream(
                    ctx.seed,
                    Purpose::Attack,
                    &[ctx.round as u64, client as u64, batch_counter, pos as u64],
                );
                let loss = sample_step(&model, x, y, config, &mut rng, grads.values_mut(), scale)
                    .map_err(|e| match e {
                        Error::Numeric(msg) => diverged(msg),
                        other => other,
                    })?;
                if !loss.is_finite() {
                    return Err(diverged(format!("loss {loss} at epoch {epoch}")));
                }
                loss_sum += loss;
            }
            apply_fedprox(&mut grads, model.params(), global.params(), config.fedprox_mu)?;
            if let Some(cv) = ctx.control {
                apply_scaffold(&mut grads, cv.global, cv.local)?;
            }
            sgd_step(&mut model, &grads, &mut opt)?;
            batch_counter += 1;
            steps += 1;
        }
        epoch_losses.push(loss_sum / shard.n() as f64);
    }

    if !model.params().is_finite() {
        return Err(diverged("non-finite parameters after local training".into()));
    }
    let scaffold = match ctx.control {
        Some(cv) => {
            // With heavy-ball momentum the model moves about lr / (1 - m) per
            // unit gradient, so that is the step the displacement is divided by.
            let effective_lr = config.sgd.lr / (1.0 - config.sgd.momentum);
            let control =
                update_scaffold_client(global.params(), model.params(), steps, effective_lr, cv.local, cv.global)?;
            let delta = control.sub(cv.local)?;
            Some(ScaffoldUpdate { control, delta })
        }
        None => None,
    };
    let loss = *epoch_losses.last().unwrap();
    let n = shard.n();
    Ok(ClientUpdate {
        client,
        params: model.params().clone(),
        loss,
        n,
        weighted_loss: n as f64 / ctx.total_samples as f64 * loss,
        epoch_losses,
        local_steps: steps,
        scaffold,
    })
}
