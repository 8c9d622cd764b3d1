//! Split a synthetic dataset across clients: IID, skewed Non-IID, and
//! skewed with unequal client sizes.
//!
//!     cargo run --example partition

use slackfed::data::{make_synthetic, SyntheticSpec};
use slackfed::partition::class_counts;
use slackfed::{partition, Dataset, PartitionSpec};

fn show(title: &str, data: &Dataset, spec: &PartitionSpec) -> slackfed::Result<()> {
    let shards = partition(data, spec)?;
    println!("{title}");
    for (shard, row) in shards.iter().zip(class_counts(data, &shards)) {
        println!("  client {}: n={:<4} {:?}", shard.id, shard.n(), row);
    }
    Ok(())
}

fn main() -> slackfed::Result<()> {
    let data = make_synthetic(&SyntheticSpec {
        n_per_class: 100,
        classes: 10,
        dim: 10,
        separation: 1.0,
        spread: 0.12,
        seed: 0,
    })?;

    show("IID, 5 clients", &data, &PartitionSpec::iid(5, 0))?;

    let skewed = PartitionSpec::non_iid(5, 2.0, 0);
    println!();
    show(
        &format!("Non-IID, skew 2 (owner keeps {}% of each class)", skewed.majority_percent()),
        &data,
        &skewed,
    )?;

    let unequal = PartitionSpec {
        sample_counts: Some(vec![60, 90, 110, 150, 130]),
        ..skewed
    };
    println!();
    show("Non-IID with unequal sizes", &data, &unequal)
}
