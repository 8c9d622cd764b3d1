//! How the server turns client losses into aggregation weights, and the
//! relaxed objective the weighting corresponds to.
//!
//!     cargo run --example slack_weights

use slackfed::aggregate::{alpha_slack_loss, slack_aggregate, slack_weights};
use slackfed::{AggregationPolicy, ClientUpdate, ParamVector};

fn main() -> slackfed::Result<()> {
    // Five equally sized clients holding scalar models.
    let losses = [0.9, 0.4, 1.3, 0.7, 1.1];
    let total = 5 * 200;
    let updates: Vec<ClientUpdate> = losses
        .iter()
        .enumerate()
        .map(|(k, &l)| ClientUpdate::new(k, ParamVector::from_flat(vec![k as f64]), 200, l, total))
        .collect();

    for (name, policy) in [
        ("FAT", AggregationPolicy::fat()),
        ("SFAT", AggregationPolicy::sfat(1.0 / 6.0, 1)),
        ("Re-SFAT", AggregationPolicy::re_sfat(1.0 / 6.0, 1)),
    ] {
        let w = slack_weights(&updates, &policy)?;
        let (theta, _) = slack_aggregate(&updates, &policy)?;
        let scaled: Vec<String> = w.weights.iter().map(|x| format!("{:.3}", x * 5.4)).collect();
        println!(
            "{name:<8} top {:?}  weights x5.4 [{}]  aggregate {:.4}",
            w.top,
            scaled.join(", "),
            theta.values()[0]
        );
    }

    let weighted: Vec<f64> = updates.iter().map(|u| u.weighted_loss).collect();
    let plain: f64 = weighted.iter().sum();
    println!("\nweighted loss {plain:.4}");
    for alpha in [0.0, 0.1, 1.0 / 6.0, 0.3] {
        let row: Vec<String> = (0..=2)
            .map(|khat| format!("K̂={khat}: {:.4}", alpha_slack_loss(&weighted, alpha, khat).unwrap()))
            .collect();
        println!("alpha {alpha:.3}  {}", row.join("  "));
    }
    Ok(())
}
