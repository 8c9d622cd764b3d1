//! Experiment configuration, read from TOML.
//!
//! Every key has a default, so a file only needs to name what it changes.
//! The defaults follow the CIFAR-10 recipe (ε = 8/255, PGD step 2/255, 10
//! steps, momentum 0.9, weight decay 1e-4, 10 local epochs, batch 32, 100
//! rounds, 5 clients with skew 2) on a synthetic stand-in task.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregationMode, AggregationPolicy, AlphaSchedule, KhatScaling};
use crate::attack::AttackSpec;
use crate::data::{load_csv, load_idx, make_synthetic_split, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::local::{LocalConfig, Trainer};
use crate::nn::SgdConfig;
use crate::partition::{PartitionMode, PartitionSpec};
use crate::rng::{derive_seed, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic {
        n_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        spread: f64,
        /// Task seed; the run's master seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `limit` training samples.
        #[serde(default)]
        limit: Option<usize>,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
}

fn default_test_per_class() -> usize {
    100
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            n_per_class: 100,
            test_per_class: 100,
            classes: 10,
            dim: 10,
            separation: 1.0,
            spread: 0.12,
            seed: None,
        }
    }
}

impl DatasetSource {
    /// Loads `(train, test)`. Relative paths resolve against `base`.
    pub fn load(&self, master_seed: u64, base: Option<&Path>) -> Result<(Dataset, Dataset)> {
        let resolve = |p: &PathBuf| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.clone(),
        };
        match self {
            DatasetSource::Synthetic {
                n_per_class,
                test_per_class,
                classes,
                dim,
                separation,
                spread,
                seed,
            } => {
                let spec = SyntheticSpec {
                    n_per_class: *n_per_class,
                    classes: *classes,
                    dim: *dim,
                    separation: *separation,
                    spread: *spread,
                    seed: seed.unwrap_or(master_seed),
                };
                let train = make_synthetic_split(&spec, 0)?;
                let test = make_synthetic_split(
                    &SyntheticSpec {
                        n_per_class: *test_per_class,
                        ..spec
                    },
                    1,
                )?;
                Ok((train, test))
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                limit,
            } => {
                let mut train = load_idx(&resolve(train_images), &resolve(train_labels))?;
                if let Some(limit) = limit {
                    let keep: Vec<usize> = (0..train.len().min(*limit)).collect();
                    train = train.subset(&keep);
                }
                let test = load_idx(&resolve(test_images), &resolve(test_labels))?;
                Ok(harmonize(train, test))
            }
            DatasetSource::Csv { train, test } => {
                let train = load_csv(&resolve(train))?;
                let test = load_csv(&resolve(test))?;
                Ok(harmonize(train, test))
            }
        }
    }
}

/// Gives both splits the larger of their inferred class counts.
fn harmonize(train: Dataset, test: Dataset) -> (Dataset, Dataset) {
    let classes = train.classes().max(test.classes());
    let widen = |d: Dataset| {
        if d.classes() == classes {
            d
        } else {
            let labels = d.labels().to_vec();
            let all: Vec<usize> = (0..d.len()).collect();
            let flat: Vec<f64> = all.iter().flat_map(|&i| d.features(i).to_vec()).collect();
            Dataset::from_flat(flat, labels, d.dim(), classes).expect("labels already validated")
        }
    };
    (widen(train), widen(test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub clients: usize,
    pub mode: PartitionMode,
    pub skew: f64,
    pub sample_counts: Option<Vec<usize>>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            clients: 5,
            mode: PartitionMode::NonIid,
            skew: 2.0,
            sample_counts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![32] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FedOptimizer {
    #[default]
    FedAvg,
    FedProx {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    Scaffold,
}

fn default_mu() -> f64 {
    0.01
}

/// Which global model client drift is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftReference {
    /// The model produced by this round's aggregation.
    #[default]
    PostAggregation,
    /// The model broadcast at the start of the round.
    PreAggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub participation: f64,
    /// Evaluate every this many rounds; the last round is always evaluated.
    /// `0` evaluates only the last round.
    pub eval_every: usize,
    pub dataset: DatasetSource,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub local: LocalConfig,
    pub aggregation: AggregationPolicy,
    pub optimizer: FedOptimizer,
    pub drift_reference: DriftReference,
    /// Attack used for robust evaluation; the training attack when absent.
    pub eval_attack: Option<AttackSpec>,
    pub output_dir: Option<PathBuf>,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            epochs: 10,
            batch_size: 32,
            trainer: Trainer::At,
            trades_beta: 6.0,
            fedprox_mu: 0.0,
            scaffold: false,
            attack: AttackSpec::cifar(),
            sgd: SgdConfig::default(),
        }
    }
}

impl Default for AggregationPolicy {
    fn default() -> Self {
        AggregationPolicy {
            mode: AggregationMode::Sfat,
            alpha: 1.0 / 6.0,
            khat: 1,
            schedule: AlphaSchedule::Constant,
            khat_scaling: KhatScaling::Clamp,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            rounds: 100,
            participation: 1.0,
            eval_every: 10,
            dataset: DatasetSource::default(),
            partition: PartitionConfig::default(),
            model: ModelConfig::default(),
            local: LocalConfig::default(),
            aggregation: AggregationPolicy::default(),
            optimizer: FedOptimizer::FedAvg,
            drift_reference: DriftReference::PostAggregation,
            eval_attack: None,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        // Dataset paths are relative to the config file.
        if let Some(dir) = path.parent() {
            config.rebase_paths(dir);
        }
        Ok(config)
    }

    fn rebase_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(train_images);
                fix(train_labels);
                fix(test_images);
                fix(test_labels);
            }
            DatasetSource::Csv { train, test } => {
                fix(train);
                fix(test);
            }
            DatasetSource::Synthetic { .. } => {}
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!(
                "participation ratio {} outside (0, 1]",
                self.participation
            )));
        }
        let k = self.partition.clients;
        if self.aggregation.mode != AggregationMode::Fat && self.aggregation.khat > k / 2 {
            return Err(Error::KhatConstraint {
                khat: self.aggregation.khat,
                participants: k,
            });
        }
        if let FedOptimizer::FedProx { mu } = self.optimizer {
            if !(mu >= 0.0) {
                return Err(Error::Config(format!("FedProx mu {mu} < 0")));
            }
        }
        self.partition_spec().validate()?;
        self.aggregation.validate()?;
        self.resolved_local().validate()?;
        if let Some(a) = &self.eval_attack {
            a.validate()?;
        }
        Ok(())
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            clients: self.partition.clients,
            mode: self.partition.mode,
            skew: self.partition.skew,
            sample_counts: self.partition.sample_counts.clone(),
            seed: derive_seed(self.seed, Purpose::Partition, &[]),
        }
    }

    /// Local config with the federated optimizer's knobs folded in.
    pub fn resolved_local(&self) -> LocalConfig {
        let mut local = self.local.clone();
        match self.optimizer {
            FedOptimizer::FedAvg => {}
            FedOptimizer::FedProx { mu } => local.fedprox_mu = mu,
            FedOptimizer::Scaffold => local.scaffold = true,
        }
        local
    }

    pub fn eval_attack(&self) -> AttackSpec {
        self.eval_attack.unwrap_or(self.local.attack)
    }

    pub fn layer_dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.model.hidden);
        dims.push(classes);
        dims
    }
}
