#![allow(dead_code)]

use slackfed::aggregate::AggregationMode;
use slackfed::{ClientUpdate, DatasetSource, ExperimentConfig, ParamVector};

/// The desk-scale task: 5 clients, skew 2 over 10 Gaussian classes in 10
/// dimensions, one hidden layer of 32, two local epochs of PGD-10 training.
pub fn desk_config(seed: u64, mode: AggregationMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        rounds: 30,
        eval_every: 0,
        dataset: DatasetSource::Synthetic {
            n_per_class: 100,
            test_per_class: 100,
            classes: 10,
            dim: 10,
            separation: 1.0,
            spread: 0.12,
            seed: None,
        },
        ..ExperimentConfig::default()
    };
    cfg.local.epochs = 2;
    cfg.local.sgd.lr = 0.01;
    cfg.aggregation.mode = mode;
    cfg
}

/// A run small enough for debug-speed tests.
pub fn tiny_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        rounds: 4,
        eval_every: 2,
        dataset: DatasetSource::Synthetic {
            n_per_class: 20,
            test_per_class: 10,
            classes: 4,
            dim: 6,
            separation: 1.0,
            spread: 0.1,
            seed: None,
        },
        ..ExperimentConfig::default()
    };
    cfg.partition.clients = 4;
    cfg.partition.skew = 5.0;
    cfg.model.hidden = vec![8];
    cfg.local.epochs = 1;
    cfg.local.batch_size = 8;
    cfg.local.attack.steps = 3;
    cfg.aggregation.khat = 1;
    cfg
}

pub fn scalar_updates(ns: &[usize], losses: &[f64], thetas: &[Vec<f64>]) -> Vec<ClientUpdate> {
    let total = ns.iter().sum();
    ns.iter()
        .zip(losses)
        .zip(thetas)
        .enumerate()
        .map(|(k, ((&n, &l), t))| ClientUpdate::new(k, ParamVector::from_flat(t.clone()), n, l, total))
        .collect()
}

/// Weighted mean computed one coordinate at a time with explicit sums, with
/// no shared code path with the library's aggregation.
pub fn brute_force_mean(thetas: &[Vec<f64>], coefficients: &[f64]) -> Vec<f64> {
    let norm: f64 = coefficients.iter().sum();
    (0..thetas[0].len())
        .map(|j| {
            let mut acc = 0.0;
            for (t, c) in thetas.iter().zip(coefficients) {
                acc += c / norm * t[j];
            }
            acc
        })
        .collect()
}

/// Per-sample emphasis by brute force: try every client as a candidate for
/// the boundary and pick the `khat` smallest `n/N · L` (ties by id).
pub fn brute_force_emphasis(ns: &[usize], losses: &[f64], alpha: f64, khat: usize, reverse: bool) -> Vec<f64> {
    let total: f64 = ns.iter().map(|&n| n as f64).sum();
    let wl: Vec<f64> = ns.iter().zip(losses).map(|(&n, &l)| n as f64 / total * l).collect();
    let ratio = (1.0 + alpha) / (1.0 - alpha);
    (0..ns.len())
        .map(|k| {
            // Rank of k among clients: how many come strictly before it.
            let before = (0..ns.len())
                .filter(|&j| {
                    if reverse {
                        wl[j] > wl[k] || (wl[j] == wl[k] && j > k)
                    } else {
                        wl[j] < wl[k] || (wl[j] == wl[k] && j < k)
                    }
                })
                .count();
            let emphasis = if before < khat { ratio } else { 1.0 };
            emphasis * ns[k] as f64
        })
        .collect()
}
