//! Deterministic simulator for federated adversarial training with
//! loss-ranked slack aggregation.
//!
//! A run partitions a dataset over simulated clients, trains each
//! participant locally with adversarial examples, and combines the results on
//! a server that up-weights the clients with the smallest weighted adversarial
//! loss. Everything is seeded from one master seed.
//!
//! ```no_run
//! use slackfed::{run, ExperimentConfig};
//!
//! let mut cfg = ExperimentConfig::default();
//! cfg.rounds = 20;
//! let artifact = run(&cfg).unwrap();
//! println!("{:?}", artifact.last_accuracy());
//! ```

// Negated comparisons are how validation rejects NaN alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod attack;
pub mod config;
pub mod data;
pub mod error;
pub mod local;
pub mod metrics;
pub mod nn;
pub mod partition;
pub mod report;
pub mod rng;
pub mod sim;
pub mod sweep;

pub use aggregate::{alpha_slack_loss, fedavg_aggregate, slack_aggregate, slack_weights, AggregationMode, AggregationPolicy};
pub use attack::{fgsm, pgd, AttackSpec};
pub use config::{DatasetSource, ExperimentConfig, FedOptimizer};
pub use data::{Dataset, SyntheticSpec};
pub use error::{Error, Result};
pub use local::{train_local, ClientUpdate, LocalConfig, Trainer};
pub use metrics::{evaluate, evaluate_all, Accuracy, EvalAttack, RoundReport};
pub use nn::{Mlp, ParamVector, SgdConfig};
pub use partition::{partition, ClientShard, PartitionMode, PartitionSpec};
pub use report::{emit_metrics, read_metrics, MetricsRow};
pub use sim::{run, run_to_dir, RunArtifact, Simulation};
pub use sweep::{run_sweep, SweepParam};
