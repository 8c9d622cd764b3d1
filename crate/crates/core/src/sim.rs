//! The federated training loop.
//!
//! Each round samples participants, broadcasts the global model, trains the
//! participants in parallel, and aggregates their updates in client-id order
//! on the calling thread. All randomness is drawn from streams keyed by the
//! master seed, so results are identical for any thread count.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::aggregate::{scaffold_server_update, slack_aggregate, sort_by_weighted_loss};
use crate::config::{DriftReference, ExperimentConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::local::{train_local, ClientUpdate, ControlVariates, RoundContext};
use crate::metrics::{evaluate_all, round_report, RoundReport};
use crate::nn::{Mlp, ParamVector};
use crate::partition::{partition, ClientShard};
use crate::report::MetricsWriter;
use crate::rng::{derive_seed, stream, Purpose};

/// Number of clients drawn per round: `max(1, round(ρK))`.
pub fn participant_count(clients: usize, ratio: f64) -> usize {
    ((ratio * clients as f64).round() as usize).clamp(1, clients)
}

/// Uniform sample without replacement, sorted by id.
pub fn sample_participants(clients: usize, ratio: f64, round: usize, seed: u64) -> Vec<usize> {
    let m = participant_count(clients, ratio);
    if m == clients {
        return (0..clients).collect();
    }
    let mut rng = stream(seed, Purpose::Participation, &[round as u64]);
    let mut ids = sample(&mut rng, clients, m).into_vec();
    ids.sort_unstable();
    ids
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub config: ExperimentConfig,
    pub reports: Vec<RoundReport>,
    pub final_params: ParamVector,
    pub round_times: Vec<Duration>,
}

impl RunArtifact {
    pub fn final_model(&self) -> Mlp {
        Mlp::from_params(self.final_params.clone()).expect("parameters come from an Mlp")
    }

    pub fn last_accuracy(&self) -> Option<crate::metrics::Accuracy> {
        self.reports.iter().rev().find_map(|r| r.accuracy)
    }

    /// Mean drift over the final third of the rounds.
    pub fn late_drift(&self) -> f64 {
        let n = self.reports.len();
        let tail = &self.reports[n - n.div_ceil(3)..];
        tail.iter().map(|r| r.mean_drift).sum::<f64>() / tail.len() as f64
    }
}

/// Prepared inputs for a run.
pub struct Simulation {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
    pub shards: Vec<ClientShard>,
}

impl Simulation {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = config.dataset.load(config.seed, None)?;
        Self::with_data(config, train, test)
    }

    pub fn with_data(config: ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.validate()?;
        if train.dim() != test.dim() {
            return Err(Error::Consistency(format!(
                "train dimension {} differs from test dimension {}",
                train.dim(),
                test.dim()
            )));
        }
        let shards = partition(&train, &config.partition_spec())?;
        Ok(Simulation {
            config,
            train,
            test,
            shards,
        })
    }

    pub fn initial_model(&self) -> Result<Mlp> {
        let dims = self.config.layer_dims(self.train.dim(), self.train.classes().max(self.test.classes()));
        Mlp::new(&dims, &mut stream(self.config.seed, Purpose::Init, &[]))
    }

    pub fn run(&self) -> Result<RunArtifact> {
        self.run_with(|_| Ok(()))
    }

    /// Runs every round, handing each report to `on_round` as soon as it is
    /// complete.
    pub fn run_with<F>(&self, mut on_round: F) -> Result<RunArtifact>
    where
        F: FnMut(&RoundReport) -> Result<()>,
    {
        let cfg = &self.config;
        let local = cfg.resolved_local();
        let clients = cfg.partition.clients;
        let eval_attack = cfg.eval_attack();

        let mut global = self.initial_model()?;
        let scaffold = local.scaffold;
        let mut c_global = global.params().zeros_like();
        let mut c_local = vec![global.params().zeros_like(); if scaffold { clients } else { 0 }];

        let mut reports = Vec::with_capacity(cfg.rounds);
        let mut round_times = Vec::with_capacity(cfg.rounds);

        for round in 1..=cfg.rounds {
            let started = Instant::now();
            let in_round = |e: Error| Error::Round {
                round,
                source: Box::new(e),
            };

            let participants: Vec<usize> = sample_participants(clients, cfg.participation, round, cfg.seed)
                .into_iter()
                .filter(|&k| self.shards[k].n() > 0)
                .collect();
            if participants.is_empty() {
                return Err(in_round(Error::NoParticipants));
            }
            let total_samples: usize = participants.iter().map(|&k| self.shards[k].n()).sum();

            let updates: Vec<ClientUpdate> = participants
                .par_iter()
                .map(|&k| {
                    let ctx = RoundContext {
                        seed: cfg.seed,
                        round,
                        total_samples,
                        control: scaffold.then(|| ControlVariates {
                            global: &c_global,
                            local: &c_local[k],
                        }),
                    };
                    train_local(&self.train, &self.shards[k], &global, &local, &ctx)
                })
                .collect::<Result<_>>()
                .map_err(in_round)?;

            let policy = cfg.aggregation.for_round(round, updates.len(), clients);
            let (aggregate, weights) = slack_aggregate(&updates, &policy).map_err(in_round)?;
            if !aggregate.is_finite() {
                return Err(Error::Divergence {
                    round,
                    last_good: Box::new(global.params().clone()),
                });
            }

            if scaffold {
                let deltas: Vec<&ParamVector> = updates
                    .iter()
                    .map(|u| &u.scaffold.as_ref().expect("scaffold clients report variates").delta)
                    .collect();
                c_global = scaffold_server_update(&c_global, &deltas, clients).map_err(in_round)?;
                for u in &updates {
                    c_local[u.client] = u.scaffold.as_ref().unwrap().control.clone();
                }
            }

            let previous = global.params().clone();
            global.set_params(aggregate).map_err(in_round)?;
            let reference = match cfg.drift_reference {
                DriftReference::PostAggregation => global.params(),
                DriftReference::PreAggregation => &previous,
            };
            let order = sort_by_weighted_loss(&updates).map_err(in_round)?;
            let mut report = round_report(round, &updates, &order, &weights.top, policy.alpha, reference, &previous)
                .map_err(in_round)?;

            let due = round == cfg.rounds || (cfg.eval_every > 0 && round % cfg.eval_every == 0);
            if due {
                let eval_seed = derive_seed(cfg.seed, Purpose::Eval, &[round as u64]);
                report.accuracy = Some(evaluate_all(&global, &self.test, &eval_attack, eval_seed).map_err(in_round)?);
            }
            on_round(&report)?;
            reports.push(report);
            round_times.push(started.elapsed());
        }

        Ok(RunArtifact {
            config: cfg.clone(),
            reports,
            final_params: global.params().clone(),
            round_times,
        })
    }
}

/// Loads data, partitions, and runs `config` in memory.
pub fn run(config: &ExperimentConfig) -> Result<RunArtifact> {
    Simulation::new(config.clone())?.run()
}

/// Runs `config`, streaming `metrics.csv` into `dir` round by round and
/// writing `config.json` up front and `final.ckpt` at the end. If the global
/// model diverges, the last finite model is saved as `last_good.ckpt`.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<RunArtifact> {
    let sim = Simulation::new(config.clone())?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::report::write_config(config, &dir.join("config.json"))?;
    let mut writer = MetricsWriter::create(&dir.join("metrics.csv"))?;
    match sim.run_with(|r| writer.write_round(r)) {
        Ok(artifact) => {
            crate::report::write_checkpoint_file(&artifact.final_params, &dir.join("final.ckpt"))?;
            Ok(artifact)
        }
        Err(Error::Divergence { round, last_good }) => {
            crate::report::write_checkpoint_file(&last_good, &dir.join("last_good.ckpt"))?;
            Err(Error::Divergence { round, last_good })
        }
        Err(e) => Err(e),
    }
}
