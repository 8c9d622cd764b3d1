//! One-dimensional parameter sweeps over seeded runs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::Accuracy;
use crate::sim::run;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Khat,
    Epsilon,
    Clients,
    Ratio,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "khat" => Ok(SweepParam::Khat),
            "epsilon" => Ok(SweepParam::Epsilon),
            "clients" => Ok(SweepParam::Clients),
            "ratio" => Ok(SweepParam::Ratio),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Khat => "khat",
            SweepParam::Epsilon => "epsilon",
            SweepParam::Clients => "clients",
            SweepParam::Ratio => "ratio",
        };
        f.write_str(s)
    }
}

impl SweepParam {
    /// Returns `base` with this parameter set to `value`. Integer parameters
    /// must be given whole values.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let whole = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{self} needs a non-negative integer, got {value}")))
            }
        };
        match self {
            SweepParam::Alpha => cfg.aggregation.alpha = value,
            SweepParam::Khat => cfg.aggregation.khat = whole()?,
            SweepParam::Epsilon => {
                let attack = &mut cfg.local.attack;
                // Keep the step-to-radius ratio of the base attack.
                let ratio = if attack.epsilon > 0.0 {
                    attack.step_size / attack.epsilon
                } else {
                    0.25
                };
                attack.epsilon = value;
                attack.step_size = value * ratio;
            }
            SweepParam::Clients => cfg.partition.clients = whole()?,
            SweepParam::Ratio => cfg.participation = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub param: SweepParam,
    pub value: f64,
    pub seed: u64,
    pub accuracy: Accuracy,
    pub late_drift: f64,
}

/// Runs every value with `seeds` consecutive seeds starting at `base.seed`.
pub fn run_sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64], seeds: usize) -> Result<Vec<SweepPoint>> {
    if values.is_empty() || seeds == 0 {
        return Err(Error::Config("a sweep needs at least one value and one seed".into()));
    }
    let mut points = Vec::with_capacity(values.len() * seeds);
    for &value in values {
        let cfg = param.apply(base, value)?;
        for s in 0..seeds as u64 {
            let mut cfg = cfg.clone();
            cfg.seed = base.seed.wrapping_add(s);
            let artifact = run(&cfg)?;
            let accuracy = artifact.last_accuracy().ok_or(Error::EmptyEvalSet)?;
            points.push(SweepPoint {
                param,
                value,
                seed: cfg.seed,
                accuracy,
                late_drift: artifact.late_drift(),
            });
        }
    }
    Ok(points)
}

/// Mean of each accuracy and drift across seeds, per value, in input order.
pub fn summarize(points: &[SweepPoint]) -> Vec<(f64, Accuracy, f64)> {
    let mut out: Vec<(f64, Accuracy, f64, usize)> = Vec::new();
    for p in points {
        let slot = match out.iter_mut().find(|o| o.0 == p.value) {
            Some(s) => s,
            None => {
                out.push((p.value, Accuracy { natural: 0.0, fgsm: 0.0, pgd20: 0.0 }, 0.0, 0));
                out.last_mut().unwrap()
            }
        };
        slot.1.natural += p.accuracy.natural;
        slot.1.fgsm += p.accuracy.fgsm;
        slot.1.pgd20 += p.accuracy.pgd20;
        slot.2 += p.late_drift;
        slot.3 += 1;
    }
    out.into_iter()
        .map(|(v, a, d, n)| {
            let n = n as f64;
            (
                v,
                Accuracy {
                    natural: a.natural / n,
                    fgsm: a.fgsm / n,
                    pgd20: a.pgd20 / n,
                },
                d / n,
            )
        })
        .collect()
}
