//! Server-side aggregation.
//!
//! Slack aggregation ranks the participating clients by their weighted loss
//! `N_k/N · L_k`, multiplies the per-sample weight of the `K̂` best-ranked
//! clients (smallest loss; largest for the reversed variant) by
//! `r = (1+α)/(1-α)`, and renormalizes:
//!
//! ```text
//! w_k = p_k N_k / Σ_j p_j N_j,   p_k = r if k is in the top set else 1
//! ```
//!
//! With `α = 0` or `K̂ = 0` every `p_k` is exactly `1` and the weights reduce
//! bit-for-bit to FedAvg's `N_k / N`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local::ClientUpdate;
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Plain sample-weighted averaging.
    Fat,
    /// Up-weight the smallest-loss clients.
    Sfat,
    /// Up-weight the largest-loss clients.
    ReSfat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AlphaSchedule {
    Constant,
    /// α moves linearly from `start` at round 1 to `end` at round `rounds`,
    /// then stays at `end`.
    Linear { start: f64, end: f64, rounds: usize },
}

/// How `K̂` is adapted when only `M` of `K` clients take part in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KhatScaling {
    /// `min(K̂, floor(M/2))`
    #[default]
    Clamp,
    /// `round(K̂ · M / K)`, at least 1 when `K̂ >= 1`, then clamped.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationPolicy {
    pub mode: AggregationMode,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub khat: usize,
    #[serde(default = "constant_schedule")]
    pub schedule: AlphaSchedule,
    #[serde(default)]
    pub khat_scaling: KhatScaling,
}

fn constant_schedule() -> AlphaSchedule {
    AlphaSchedule::Constant
}

impl AggregationPolicy {
    pub fn fat() -> Self {
        AggregationPolicy {
            mode: AggregationMode::Fat,
            alpha: 0.0,
            khat: 0,
            schedule: AlphaSchedule::Constant,
            khat_scaling: KhatScaling::Clamp,
        }
    }

    pub fn sfat(alpha: f64, khat: usize) -> Self {
        AggregationPolicy {
            mode: AggregationMode::Sfat,
            alpha,
            khat,
            ..Self::fat()
        }
    }

    pub fn re_sfat(alpha: f64, khat: usize) -> Self {
        AggregationPolicy {
            mode: AggregationMode::ReSfat,
            ..Self::sfat(alpha, khat)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if let AlphaSchedule::Linear { start, end, rounds } = self.schedule {
            check_alpha(start)?;
            check_alpha(end)?;
            if rounds == 0 {
                return Err(Error::Config("alpha schedule needs rounds >= 1".into()));
            }
        }
        Ok(())
    }

    /// α in effect at 1-based `round`.
    pub fn alpha_at(&self, round: usize) -> f64 {
        match self.schedule {
            AlphaSchedule::Constant => self.alpha,
            AlphaSchedule::Linear { start, end, rounds } => {
                if rounds <= 1 || round >= rounds {
                    return if round >= rounds { end } else { start };
                }
                let t = (round.max(1) - 1) as f64 / (rounds - 1) as f64;
                start + (end - start) * t
            }
        }
    }

    /// `K̂` for a round with `participants` of `clients` taking part.
    pub fn effective_khat(&self, participants: usize, clients: usize) -> usize {
        let cap = participants / 2;
        let khat = match self.khat_scaling {
            KhatScaling::Clamp => self.khat,
            KhatScaling::Proportional if self.khat == 0 => 0,
            KhatScaling::Proportional => {
                let scaled = (self.khat as f64 * participants as f64 / clients.max(1) as f64).round();
                (scaled as usize).max(1)
            }
        };
        khat.min(cap)
    }

    /// Concrete policy for one round: scheduled α and effective `K̂`.
    pub fn for_round(&self, round: usize, participants: usize, clients: usize) -> AggregationPolicy {
        AggregationPolicy {
            alpha: self.alpha_at(round),
            khat: self.effective_khat(participants, clients),
            schedule: AlphaSchedule::Constant,
            ..self.clone()
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// `(1+α)/(1-α)`
pub fn slack_ratio(alpha: f64) -> f64 {
    (1.0 + alpha) / (1.0 - alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlackWeights {
    /// Final aggregation weight per update, in input order.
    pub weights: Vec<f64>,
    /// Client ids of the up-weighted set, in rank order.
    pub top: Vec<usize>,
    pub ratio: f64,
}

fn check_updates(updates: &[ClientUpdate]) -> Result<()> {
    let first = updates.first().ok_or(Error::NoParticipants)?;
    for u in &updates[1..] {
        first.params.check_layout(&u.params)?;
    }
    Ok(())
}

/// `Σ_k w_k θ_k`, accumulated in input order.
pub fn weighted_sum(params: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let first = params.first().ok_or(Error::NoParticipants)?;
    let mut out = first.zeros_like();
    for (p, &w) in params.iter().zip(weights) {
        out.axpy(w, p)?;
    }
    Ok(out)
}

pub fn fedavg_weights(updates: &[ClientUpdate]) -> Vec<f64> {
    let total: f64 = updates.iter().map(|u| u.n as f64).sum();
    updates.iter().map(|u| u.n as f64 / total).collect()
}

/// Sample-weighted mean of the client parameters.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ParamVector> {
    check_updates(updates)?;
    let params: Vec<&ParamVector> = updates.iter().map(|u| &u.params).collect();
    weighted_sum(&params, &fedavg_weights(updates))
}

/// Positions of `updates` ordered by ascending weighted loss; ties keep the
/// lower client id first.
pub fn sort_by_weighted_loss(updates: &[ClientUpdate]) -> Result<Vec<usize>> {
    if let Some(bad) = updates.iter().find(|u| !u.weighted_loss.is_finite()) {
        return Err(Error::InvalidLoss {
            client: bad.client,
            loss: bad.weighted_loss,
        });
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by(|&a, &b| {
        updates[a]
            .weighted_loss
            .partial_cmp(&updates[b].weighted_loss)
            .unwrap_or(Ordering::Equal)
            .then(updates[a].client.cmp(&updates[b].client))
    });
    Ok(order)
}

pub fn slack_weights(updates: &[ClientUpdate], policy: &AggregationPolicy) -> Result<SlackWeights> {
    check_alpha(policy.alpha)?;
    check_updates(updates)?;
    let m = updates.len();
    if policy.khat > m / 2 {
        return Err(Error::KhatConstraint {
            khat: policy.khat,
            participants: m,
        });
    }
    let order = sort_by_weighted_loss(updates)?;
    let ratio = slack_ratio(policy.alpha);
    let top_positions: Vec<usize> = match policy.mode {
        AggregationMode::Fat => Vec::new(),
        AggregationMode::Sfat => order.iter().take(policy.khat).copied().collect(),
        AggregationMode::ReSfat => order.iter().rev().take(policy.khat).copied().collect(),
    };
    let mut emphasis = vec![1.0; m];
    for &p in &top_positions {
        emphasis[p] = ratio;
    }
    let scaled: Vec<f64> = updates.iter().zip(&emphasis).map(|(u, e)| e * u.n as f64).collect();
    let total: f64 = scaled.iter().sum();
    Ok(SlackWeights {
        weights: scaled.iter().map(|s| s / total).collect(),
        top: top_positions.iter().map(|&p| updates[p].client).collect(),
        ratio,
    })
}

pub fn slack_aggregate(updates: &[ClientUpdate], policy: &AggregationPolicy) -> Result<(ParamVector, SlackWeights)> {
    let weights = slack_weights(updates, policy)?;
    let params: Vec<&ParamVector> = updates.iter().map(|u| &u.params).collect();
    Ok((weighted_sum(&params, &weights.weights)?, weights))
}

/// `(1+α) Σ_{K̂ smallest} + (1-α) Σ_{rest}` over the weighted client losses.
pub fn alpha_slack_loss(weighted_losses: &[f64], alpha: f64, khat: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if khat > weighted_losses.len() / 2 {
        return Err(Error::KhatConstraint {
            khat,
            participants: weighted_losses.len(),
        });
    }
    if let Some((client, &loss)) = weighted_losses.iter().enumerate().find(|(_, l)| !l.is_finite()) {
        return Err(Error::InvalidLoss { client, loss });
    }
    let mut sorted = weighted_losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (top, rest) = sorted.split_at(khat);
    Ok((1.0 + alpha) * top.iter().sum::<f64>() + (1.0 - alpha) * rest.iter().sum::<f64>())
}

/// `c + (M/K) · mean(deltas)`
pub fn scaffold_server_update(
    c_global: &ParamVector,
    deltas: &[&ParamVector],
    clients: usize,
) -> Result<ParamVector> {
    let mut out = c_global.clone();
    if deltas.is_empty() {
        return Ok(out);
    }
    let m = deltas.len() as f64;
    let mut mean = c_global.zeros_like();
    for d in deltas {
        mean.axpy(1.0 / m, d)?;
    }
    out.axpy(m / clients as f64, &mean)?;
    Ok(out)
}
