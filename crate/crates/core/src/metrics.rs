//! Per-round diagnostics and held-out evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{fgsm, pgd, AttackSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::local::ClientUpdate;
use crate::nn::{Mlp, ParamVector};
use crate::rng::{stream, Purpose};

/// `‖θ_k - θ_s‖₂` for every client, plus their mean.
pub fn client_drift(params: &[&ParamVector], reference: &ParamVector) -> Result<(Vec<f64>, f64)> {
    let drifts = params
        .iter()
        .map(|p| Ok(p.sub(reference)?.norm_sq().sqrt()))
        .collect::<Result<Vec<f64>>>()?;
    let mean = if drifts.is_empty() {
        0.0
    } else {
        drifts.iter().sum::<f64>() / drifts.len() as f64
    };
    Ok((drifts, mean))
}

/// Spread of the pseudo-gradients `g_k = θ_k - θ_prev`:
/// `mean_k ‖g_k - mean(g)‖²`.
pub fn gradient_variance(params: &[&ParamVector], previous_global: &ParamVector) -> Result<f64> {
    if params.len() < 2 {
        return Err(Error::UndefinedVariance(params.len()));
    }
    let pseudo = params
        .iter()
        .map(|p| p.sub(previous_global))
        .collect::<Result<Vec<_>>>()?;
    let m = pseudo.len() as f64;
    let mut mean = previous_global.zeros_like();
    for g in &pseudo {
        mean.axpy(1.0 / m, g)?;
    }
    let total: f64 = pseudo
        .iter()
        .map(|g| g.sub(&mean).map(|d| d.norm_sq()))
        .sum::<Result<f64>>()?;
    Ok(total / m)
}

/// `Σ_{k ≤ K̂} N_φ(k) - Σ_{k > K̂} N_φ(k)` for counts already in rank order.
pub fn xi_count(sorted_counts: &[usize], khat: usize) -> i64 {
    let khat = khat.min(sorted_counts.len());
    let top: i64 = sorted_counts[..khat].iter().map(|&n| n as i64).sum();
    let rest: i64 = sorted_counts[khat..].iter().map(|&n| n as i64).sum();
    top - rest
}

/// Attack applied to test inputs before classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalAttack {
    None,
    Fgsm(AttackSpec),
    Pgd(AttackSpec),
}

/// Fraction of correctly classified (possibly attacked) samples. Random
/// starts draw from a per-sample stream, so the result does not depend on
/// the thread count.
pub fn evaluate(model: &Mlp, test: &Dataset, attack: EvalAttack, seed: u64) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let correct = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = test.get(i);
            let input = match attack {
                EvalAttack::None => x.to_vec(),
                EvalAttack::Fgsm(spec) => fgsm(model, x, y, &spec)?,
                EvalAttack::Pgd(spec) => pgd(model, x, y, &spec, &mut stream(seed, Purpose::Eval, &[i as u64]))?,
            };
            Ok(usize::from(model.predict(&input)? == y))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub natural: f64,
    pub fgsm: f64,
    pub pgd20: f64,
}

/// Natural, FGSM and PGD-20 accuracy using the training ε and step size.
pub fn evaluate_all(model: &Mlp, test: &Dataset, attack: &AttackSpec, seed: u64) -> Result<Accuracy> {
    Ok(Accuracy {
        natural: evaluate(model, test, EvalAttack::None, seed)?,
        fgsm: evaluate(model, test, EvalAttack::Fgsm(*attack), seed)?,
        pgd20: evaluate(model, test, EvalAttack::Pgd(attack.with_steps(20)), seed)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client: usize,
    pub n: usize,
    pub loss: f64,
    pub weighted_loss: f64,
    pub drift: f64,
    pub is_top: bool,
}

/// Everything recorded about one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<ClientRecord>,
    pub mean_drift: f64,
    /// `None` when fewer than two clients took part.
    pub grad_variance: Option<f64>,
    pub xi: i64,
    pub top: Vec<usize>,
    pub alpha: f64,
    pub accuracy: Option<Accuracy>,
}

impl RoundReport {
    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(|c| c.n).sum()
    }

    pub fn total_weighted_loss(&self) -> f64 {
        self.clients.iter().map(|c| c.weighted_loss).sum()
    }

    pub fn mean_loss(&self) -> f64 {
        self.clients.iter().map(|c| c.loss).sum::<f64>() / self.clients.len().max(1) as f64
    }
}

/// Builds a report from the round's updates (sorted by client id), the
/// rank order, and the top set.
pub fn round_report(
    round: usize,
    updates: &[ClientUpdate],
    order: &[usize],
    top: &[usize],
    alpha: f64,
    drift_reference: &ParamVector,
    previous_global: &ParamVector,
) -> Result<RoundReport> {
    let params: Vec<&ParamVector> = updates.iter().map(|u| &u.params).collect();
    let (drifts, mean_drift) = client_drift(&params, drift_reference)?;
    let grad_variance = if updates.len() >= 2 {
        Some(gradient_variance(&params, previous_global)?)
    } else {
        None
    };
    let sorted_counts: Vec<usize> = order.iter().map(|&i| updates[i].n).collect();
    let clients = updates
        .iter()
        .zip(drifts)
        .map(|(u, drift)| ClientRecord {
            client: u.client,
            n: u.n,
            loss: u.loss,
            weighted_loss: u.weighted_loss,
            drift,
            is_top: top.contains(&u.client),
        })
        .collect();
    Ok(RoundReport {
        round,
        clients,
        mean_drift,
        grad_variance,
        xi: xi_count(&sorted_counts, top.len()),
        top: top.to_vec(),
        alpha,
        accuracy: None,
    })
}

/// How often each client was in the up-weighted set.
pub fn trace_topk(reports: &[RoundReport], clients: usize) -> Vec<usize> {
    let mut counts = vec![0; clients];
    for r in reports {
        for &c in &r.top {
            if c >= counts.len() {
                counts.resize(c + 1, 0);
            }
            counts[c] += 1;
        }
    }
    counts
}
