//! IID and label-skewed client partitions.
//!
//! In skewed mode the classes are dealt round-robin to clients (class `c`
//! belongs to client `c % K`). Each class is apportioned with quotas of `s%`
//! per non-owner and `(100 - (K - 1) s)%` for the owner, rounded by largest
//! remainder so every client is within one sample of its quota.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    Iid,
    #[serde(alias = "non-iid", alias = "non_iid")]
    NonIid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub clients: usize,
    pub mode: PartitionMode,
    /// Minority share in percent; only used in skewed mode.
    #[serde(default)]
    pub skew: f64,
    /// Exact per-client sizes for unequal splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

impl PartitionSpec {
    pub fn iid(clients: usize, seed: u64) -> Self {
        PartitionSpec {
            clients,
            mode: PartitionMode::Iid,
            skew: 0.0,
            sample_counts: None,
            seed,
        }
    }

    pub fn non_iid(clients: usize, skew: f64, seed: u64) -> Self {
        PartitionSpec {
            clients,
            mode: PartitionMode::NonIid,
            skew,
            sample_counts: None,
            seed,
        }
    }

    /// Percentage of each owned class kept by its owner.
    pub fn majority_percent(&self) -> f64 {
        100.0 - (self.clients as f64 - 1.0) * self.skew
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 2 {
            return Err(Error::Config(format!("need at least 2 clients, got {}", self.clients)));
        }
        if self.mode == PartitionMode::NonIid
            && (!(self.skew >= 0.0) || self.majority_percent() <= self.skew)
        {
            return Err(Error::InvalidSkew {
                skew: self.skew,
                clients: self.clients,
            });
        }
        if let Some(counts) = &self.sample_counts {
            if counts.len() != self.clients {
                return Err(Error::Config(format!(
                    "{} sample counts for {} clients",
                    counts.len(),
                    self.clients
                )));
            }
            if counts.contains(&0) {
                return Err(Error::Config("sample counts must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A client's slice of the training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub id: usize,
    pub indices: Vec<usize>,
}

impl ClientShard {
    pub fn n(&self) -> usize {
        self.indices.len()
    }
}

fn owner_of(class: usize, clients: usize) -> usize {
    class % clients
}

fn shuffled(mut v: Vec<usize>, seed: u64, path: &[u64]) -> Vec<usize> {
    v.shuffle(&mut stream(seed, Purpose::Partition, path));
    v
}

fn finish(mut shards: Vec<Vec<usize>>) -> Vec<ClientShard> {
    shards
        .iter_mut()
        .enumerate()
        .map(|(id, idx)| {
            idx.sort_unstable();
            ClientShard {
                id,
                indices: std::mem::take(idx),
            }
        })
        .collect()
}

/// Splits `dataset` among `spec.clients` clients. Delegates to
/// [`partition_unequal`] when `sample_counts` is set.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    if spec.sample_counts.is_some() {
        return partition_unequal(dataset, spec);
    }
    let k = spec.clients;
    let mut shards = vec![Vec::new(); k];
    match spec.mode {
        PartitionMode::Iid => {
            // Stratified deal: shuffle within each class, then hand samples out
            // round-robin with one counter running across classes. Shard sizes
            // and per-class counts then differ by at most one.
            let mut next = 0usize;
            for (class, members) in dataset.class_indices().into_iter().enumerate() {
                for i in shuffled(members, spec.seed, &[0, class as u64]) {
                    shards[next % k].push(i);
                    next += 1;
                }
            }
        }
        PartitionMode::NonIid => {
            for (class, members) in dataset.class_indices().into_iter().enumerate() {
                let owner = owner_of(class, k);
                let mut quotas = vec![spec.skew; k];
                quotas[owner] = spec.majority_percent();
                let sizes = largest_remainder(&quotas, members.len());
                let members = shuffled(members, spec.seed, &[1, class as u64]);
                let mut rest = members.as_slice();
                for (shard, take) in shards.iter_mut().zip(sizes) {
                    shard.extend_from_slice(&rest[..take]);
                    rest = &rest[take..];
                }
            }
        }
    }
    Ok(finish(shards))
}

/// Builds shards of exactly `spec.sample_counts[k]` samples.
///
/// In skewed mode each client's class mix follows the same preference as the
/// equal split (owned classes weighted by the majority percent, others by
/// `s`), scaled to its requested size. Clients are served in id order; when a
/// class pool runs dry the shortfall is filled from the client's next most
/// preferred classes.
pub fn partition_unequal(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    let counts = spec
        .sample_counts
        .as_ref()
        .ok_or_else(|| Error::Config("unequal split needs sample_counts".into()))?;
    let requested: usize = counts.iter().sum();
    if requested > dataset.len() {
        return Err(Error::InfeasibleSplit(format!(
            "{requested} samples requested from a dataset of {}",
            dataset.len()
        )));
    }
    let k = spec.clients;
    let mut shards = vec![Vec::new(); k];

    if spec.mode == PartitionMode::Iid {
        let all = shuffled((0..dataset.len()).collect(), spec.seed, &[2]);
        let mut rest = all.as_slice();
        for (shard, &n) in shards.iter_mut().zip(counts) {
            shard.extend_from_slice(&rest[..n]);
            rest = &rest[n..];
        }
        return Ok(finish(shards));
    }

    let pools: Vec<Vec<usize>> = dataset
        .class_indices()
        .into_iter()
        .enumerate()
        .map(|(c, members)| shuffled(members, spec.seed, &[3, c as u64]))
        .collect();
    let classes = pools.len();
    let mut remaining: Vec<usize> = pools.iter().map(Vec::len).collect();
    let mut cursor = vec![0usize; classes];
    let majority = spec.majority_percent();

    for (client, &want) in counts.iter().enumerate() {
        let pref: Vec<f64> = (0..classes)
            .map(|c| {
                let w = if owner_of(c, k) == client { majority } else { spec.skew };
                w * pools[c].len() as f64
            })
            .collect();
        let targets = largest_remainder(&pref, want);

        let mut take: Vec<usize> = targets
            .iter()
            .zip(&remaining)
            .map(|(&t, &r)| t.min(r))
            .collect();
        let mut deficit = want - take.iter().sum::<usize>();
        if deficit > 0 {
            let mut order: Vec<usize> = (0..classes).collect();
            order.sort_by(|&a, &b| pref[b].total_cmp(&pref[a]).then(a.cmp(&b)));
            for c in order {
                let extra = (remaining[c] - take[c]).min(deficit);
                take[c] += extra;
                deficit -= extra;
                if deficit == 0 {
                    break;
                }
            }
        }
        if deficit > 0 {
            return Err(Error::InfeasibleSplit(format!(
                "client {client}: class pools exhausted with {deficit} samples missing"
            )));
        }
        for c in 0..classes {
            shards[client].extend_from_slice(&pools[c][cursor[c]..cursor[c] + take[c]]);
            cursor[c] += take[c];
            remaining[c] -= take[c];
        }
    }
    Ok(finish(shards))
}

/// Apportions `total` items proportionally to `weights` (Hamilton's method;
/// ties go to the lower index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        let mut out = vec![0; weights.len()];
        for i in 0..total {
            out[i % weights.len()] += 1;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let short = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// `counts[k][c]`: samples of class `c` held by client `k`.
pub fn class_counts(dataset: &Dataset, shards: &[ClientShard]) -> Vec<Vec<usize>> {
    shards
        .iter()
        .map(|s| {
            let mut row = vec![0; dataset.classes()];
            for &i in &s.indices {
                row[dataset.label(i)] += 1;
            }
            row
        })
        .collect()
}
