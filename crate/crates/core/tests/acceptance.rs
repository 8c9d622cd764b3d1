//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if a criterion outside `KNOWN_UNMET` fails.
//!
//!     cargo test --release --test acceptance

mod common;

use common::{brute_force_emphasis, brute_force_mean, desk_config, scalar_updates};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use slackfed::aggregate::{alpha_slack_loss, fedavg_aggregate, slack_aggregate, slack_weights, AggregationMode};
use slackfed::attack::AttackSpec;
use slackfed::data::Dataset;
use slackfed::metrics::trace_topk;
use slackfed::nn::cross_entropy;
use slackfed::partition::class_counts;
use slackfed::{fgsm, partition, pgd, run, AggregationPolicy, Mlp, PartitionSpec, RunArtifact, Trainer};

/// Criteria that do not hold for this implementation, with the reason. They
/// still run and print their real outcome.
const KNOWN_UNMET: &[(u32, &str)] = &[
    (
        2,
        "the relaxed loss grows with K̂: moving a client from the (1-α) group to the (1+α) group adds 2α·(N_k/N)L_k >= 0",
    ),
    (
        10,
        "on the synthetic task, up-weighting the lowest-loss client biases the global model toward that client's classes and lowers robust accuracy",
    ),
    (
        12,
        "loss rankings are stable on fixed small shards and reinforced by the up-weighting, so one client stays on top",
    ),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let k = rng.gen_range(2..=12);
    let ns = (0..k).map(|_| rng.gen_range(1..1000)).collect();
    let losses = (0..k).map(|_| rng.gen_range(0.0..5.0)).collect();
    (ns, losses)
}

fn weighted(ns: &[usize], losses: &[f64]) -> Vec<f64> {
    let total: f64 = ns.iter().map(|&n| n as f64).sum();
    ns.iter().zip(losses).map(|(&n, &l)| n as f64 / total * l).collect()
}

fn c1_lower_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0;
    let mut equality_misses = 0;
    for _ in 0..1000 {
        let (ns, losses) = random_instance(&mut rng);
        let wl = weighted(&ns, &losses);
        let plain: f64 = wl.iter().sum();
        let alpha = rng.gen_range(0.0..1.0);
        let khat = rng.gen_range(0..=wl.len() / 2);
        if alpha_slack_loss(&wl, alpha, khat).unwrap() > plain + 1e-12 {
            violations += 1;
        }
        if (alpha_slack_loss(&wl, 0.0, khat).unwrap() - plain).abs() > 1e-12 {
            equality_misses += 1;
        }
    }
    outcome(
        violations == 0 && equality_misses == 0,
        format!("{violations} bound violations, {equality_misses} inequalities at α=0 over 1000 instances"),
    )
}

fn c2_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let alphas: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let (mut alpha_bad, mut khat_bad, mut strict_bad) = (0, 0, 0);
    for _ in 0..200 {
        let (ns, losses) = random_instance(&mut rng);
        let wl = weighted(&ns, &losses);
        let distinct = {
            let mut s = wl.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[0] != w[1])
        };
        let max_khat = wl.len() / 2;
        let grid: Vec<Vec<f64>> = alphas
            .iter()
            .map(|&a| (0..=max_khat).map(|k| alpha_slack_loss(&wl, a, k).unwrap()).collect())
            .collect();
        for i in 0..alphas.len() {
            for k in 0..=max_khat {
                if i + 1 < alphas.len() {
                    if grid[i + 1][k] > grid[i][k] + 1e-12 {
                        alpha_bad += 1;
                    }
                    if distinct && k < wl.len() && grid[i + 1][k] >= grid[i][k] - 1e-12 {
                        strict_bad += 1;
                    }
                }
                if k < max_khat {
                    if grid[i][k + 1] > grid[i][k] + 1e-12 {
                        khat_bad += 1;
                    }
                    if distinct && grid[i][k + 1] >= grid[i][k] - 1e-12 {
                        strict_bad += 1;
                    }
                }
            }
        }
    }
    outcome(
        alpha_bad == 0 && khat_bad == 0 && strict_bad == 0,
        format!("α-axis increases {alpha_bad}, K̂-axis increases {khat_bad}, non-strict steps {strict_bad}"),
    )
}

fn c3_simplex_and_ratio() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for _ in 0..1000 {
        let (ns, losses) = random_instance(&mut rng);
        let k = ns.len();
        let thetas: Vec<Vec<f64>> = (0..k).map(|i| vec![i as f64]).collect();
        let updates = scalar_updates(&ns, &losses, &thetas);
        let alpha = rng.gen_range(0.0..0.95);
        let khat = rng.gen_range(0..=k / 2);
        for mode in [AggregationMode::Fat, AggregationMode::Sfat, AggregationMode::ReSfat] {
            let policy = AggregationPolicy {
                mode,
                alpha,
                khat,
                ..AggregationPolicy::default()
            };
            let w = slack_weights(&updates, &policy).unwrap();
            if (w.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                bad += 1;
            }
            let per_sample: Vec<f64> = w.weights.iter().zip(&ns).map(|(x, &n)| x / n as f64).collect();
            let ratio = (1.0 + alpha) / (1.0 - alpha);
            for &t in &w.top {
                for o in (0..k).filter(|o| !w.top.contains(o)) {
                    if (per_sample[t] / per_sample[o] - ratio).abs() > 1e-9 {
                        bad += 1;
                    }
                }
            }
        }
    }
    let five = scalar_updates(&[100; 5], &[0.3, 0.1, 0.5, 0.4, 0.2], &vec![vec![0.0]; 5]);
    let w = slack_weights(&five, &AggregationPolicy::sfat(1.0 / 6.0, 1)).unwrap();
    let pattern = w
        .weights
        .iter()
        .enumerate()
        .all(|(k, &x)| (x - if k == 1 { 1.4 / 5.4 } else { 1.0 / 5.4 }).abs() <= 1e-12);
    outcome(
        bad == 0 && pattern,
        format!("{bad} simplex/ratio violations; 1.4:1 pattern on K=5 {}", if pattern { "ok" } else { "wrong" }),
    )
}

fn c4_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..50 {
        let (ns, losses) = random_instance(&mut rng);
        let dim = rng.gen_range(1..20);
        let thetas: Vec<Vec<f64>> = ns.iter().map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let updates = scalar_updates(&ns, &losses, &thetas);
        let fedavg = fedavg_aggregate(&updates).unwrap();
        let khat = ns.len() / 2;
        for policy in [
            AggregationPolicy::sfat(0.0, khat),
            AggregationPolicy::sfat(0.4, 0),
            AggregationPolicy::fat(),
        ] {
            let (agg, _) = slack_aggregate(&updates, &policy).unwrap();
            let same = agg.values().iter().zip(fedavg.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                bad += 1;
            }
        }
    }
    outcome(bad == 0, format!("{bad} non-identical aggregates over 50 instances"))
}

fn fd_loss(model: &Mlp, x: &[f64], y: usize) -> f64 {
    cross_entropy(&model.forward(x).unwrap(), y).unwrap().0
}

fn c5_gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for _ in 0..100 {
        let depth = rng.gen_range(0..3);
        let mut dims = vec![rng.gen_range(1..6)];
        for _ in 0..depth {
            dims.push(rng.gen_range(2..8));
        }
        dims.push(rng.gen_range(2..5));
        // Random biases too: with zero biases a dead layer puts the next
        // pre-activations exactly on the ReLU kink, where no derivative exists.
        let mut model = Mlp::new(&dims, &mut rng).unwrap();
        for v in model.params_mut().values_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y = rng.gen_range(0..*dims.last().unwrap());
        let (_, grads, input_grad) = model.loss_and_grads(&x, y).unwrap();
        let h = 1e-5;

        let mut numeric = Vec::with_capacity(grads.len());
        let mut probe = model.clone();
        for j in 0..grads.len() {
            let orig = probe.params().values()[j];
            probe.params_mut().values_mut()[j] = orig + h;
            let up = fd_loss(&probe, &x, y);
            probe.params_mut().values_mut()[j] = orig - h;
            let down = fd_loss(&probe, &x, y);
            probe.params_mut().values_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let mut numeric_x = Vec::with_capacity(x.len());
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += h;
            let up = fd_loss(&model, &xp, y);
            xp[j] -= 2.0 * h;
            let down = fd_loss(&model, &xp, y);
            numeric_x.push((up - down) / (2.0 * h));
        }
        for (what, analytic, numeric) in [("params", grads.values(), &numeric), ("input", &input_grad[..], &numeric_x)] {
            let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
                + numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
            if scale > 1e-10 && diff / scale > worst {
                worst = diff / scale;
                worst_at = format!("{what} gradient of {dims:?}");
            }
        }
    }
    outcome(worst < 1e-4, format!("worst relative error {worst:.2e} over 100 networks ({worst_at})"))
}

fn c6_attack_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut attacked = 0;
    let mut escapes = 0;
    let mut mismatches = 0;
    let models: Vec<Mlp> = (0..20).map(|_| Mlp::new(&[6, 10, 4], &mut rng).unwrap()).collect();
    while attacked < 10_000 {
        let model = &models[attacked % models.len()];
        let x: Vec<f64> = (0..6)
            .map(|_| match rng.gen_range(0..4) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(0.0..1.0),
            })
            .collect();
        let y = rng.gen_range(0..4);
        let eps = [0.0, 2.0 / 255.0, 8.0 / 255.0, 0.1, 0.3][rng.gen_range(0..5)];
        let spec = AttackSpec {
            epsilon: eps,
            step_size: (eps / 4.0).max(1e-3),
            steps: rng.gen_range(1..11),
            random_start: rng.gen(),
        };
        let adv_pgd = pgd(model, &x, y, &spec, &mut rng).unwrap();
        let adv_fgsm = fgsm(model, &x, y, &spec).unwrap();
        for adv in [&adv_pgd, &adv_fgsm] {
            attacked += 1;
            for (a, b) in adv.iter().zip(&x) {
                if (a - b).abs() > eps + 1e-12 || !(0.0..=1.0).contains(a) {
                    escapes += 1;
                }
            }
        }
        let single = AttackSpec {
            epsilon: eps,
            step_size: eps.max(1e-3),
            steps: 1,
            random_start: false,
        };
        let one_step = AttackSpec {
            step_size: eps,
            ..single
        };
        if eps > 0.0 {
            let p = pgd(model, &x, y, &one_step, &mut rng).unwrap();
            let f = fgsm(model, &x, y, &one_step).unwrap();
            if p.iter().zip(&f).any(|(a, b)| a.to_bits() != b.to_bits()) {
                mismatches += 1;
            }
        }
    }
    outcome(
        escapes == 0 && mismatches == 0,
        format!("{attacked} attacked samples, {escapes} outside ball or box, {mismatches} FGSM/PGD-1 mismatches"),
    )
}

fn c7_partition() -> Outcome {
    let mut problems = Vec::new();
    for per_class in [1000usize, 997, 250] {
        let n = per_class * 10;
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let data = Dataset::from_flat(vec![0.5; n], labels, 1, 10).unwrap();
        let shards = partition(&data, &PartitionSpec::non_iid(5, 2.0, 7)).unwrap();
        let mut seen = vec![0u8; n];
        for s in &shards {
            for &i in &s.indices {
                seen[i] += 1;
            }
        }
        if seen.iter().any(|&c| c != 1) {
            problems.push(format!("{per_class}/class: not a disjoint cover"));
        }
        let counts = class_counts(&data, &shards);
        let major = 0.92 * per_class as f64;
        let minor = 0.02 * per_class as f64;
        for class in 0..10 {
            let owner = (0..5).max_by_key(|&k| counts[k][class]).unwrap();
            for (k, row) in counts.iter().enumerate() {
                let target = if k == owner { major } else { minor };
                if (row[class] as f64 - target).abs() > 1.0 {
                    problems.push(format!("{per_class}/class: client {k} class {class} has {}", row[class]));
                }
            }
        }
    }
    let pass = problems.is_empty();
    outcome(
        pass,
        if pass {
            "92%/2% ±1 sample on 1000, 997 and 250 per class; disjoint and exhaustive".to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn c8_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let cases: Vec<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>)> = vec![
        (vec![1, 2, 3], vec![0.9, 0.2, 0.5], vec![vec![1.0], vec![-2.0], vec![4.0]]),
        (vec![10, 10, 10], vec![0.3, 0.3, 0.1], vec![vec![0.5], vec![0.25], vec![-1.0]]),
        (
            vec![7, 3, 5],
            vec![1.2, 0.4, 2.0],
            vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0], vec![0.5, 0.5, -0.5]],
        ),
        (
            vec![100, 1, 50],
            vec![0.05, 3.0, 0.2],
            vec![vec![0.1, -0.2], vec![10.0, 20.0], vec![-3.0, 3.0]],
        ),
    ];
    for (ns, losses, thetas) in &cases {
        let updates = scalar_updates(ns, losses, thetas);
        let plain: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let fed = fedavg_aggregate(&updates).unwrap();
        for (a, b) in fed.values().iter().zip(brute_force_mean(thetas, &plain)) {
            worst = worst.max((a - b).abs());
        }
        for alpha in [0.0, 1.0 / 6.0, 0.5] {
            for (policy, reverse) in [
                (AggregationPolicy::sfat(alpha, 1), false),
                (AggregationPolicy::re_sfat(alpha, 1), true),
            ] {
                let (agg, _) = slack_aggregate(&updates, &policy).unwrap();
                let coefficients = brute_force_emphasis(ns, losses, alpha, 1, reverse);
                for (a, b) in agg.values().iter().zip(brute_force_mean(thetas, &coefficients)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-12, format!("largest deviation from the oracle {worst:.1e}"))
}

fn seeds() -> Vec<u64> {
    (0..5).collect()
}

fn run_ok(cfg: &slackfed::ExperimentConfig) -> RunArtifact {
    run(cfg).expect("desk-scale run")
}

fn c9_heterogeneity() -> Outcome {
    let grid = [0.0, 4.0 / 255.0, 16.0 / 255.0];
    let rows: Vec<Vec<f64>> = seeds()
        .into_par_iter()
        .map(|seed| {
            grid.iter()
                .map(|&eps| {
                    let mut cfg = desk_config(seed, AggregationMode::Fat);
                    cfg.local.attack.epsilon = eps;
                    if eps > 0.0 {
                        cfg.local.attack.step_size = eps / 4.0;
                    }
                    run_ok(&cfg).reports.last().unwrap().mean_drift
                })
                .collect()
        })
        .collect();
    let holds = rows.iter().filter(|d| d[0] <= d[1] && d[1] <= d[2]).count();
    let shown: Vec<String> = rows.iter().map(|d| format!("{:.3}/{:.3}/{:.3}", d[0], d[1], d[2])).collect();
    outcome(holds >= 4, format!("{holds}/5 seeds non-decreasing; drift at ε=0/4/16 (×1/255): {}", shown.join(" ")))
}

struct Trio {
    fat: RunArtifact,
    sfat: RunArtifact,
    re: RunArtifact,
}

fn trios() -> Vec<Trio> {
    seeds()
        .into_par_iter()
        .map(|seed| Trio {
            fat: run_ok(&desk_config(seed, AggregationMode::Fat)),
            sfat: run_ok(&desk_config(seed, AggregationMode::Sfat)),
            re: run_ok(&desk_config(seed, AggregationMode::ReSfat)),
        })
        .collect()
}

fn pgd_acc(a: &RunArtifact) -> f64 {
    a.last_accuracy().unwrap().pgd20
}

fn c10_sfat_vs_fat(trios: &[Trio]) -> Outcome {
    let mut holds = 0;
    let mut shown = Vec::new();
    for t in trios {
        let drift_ok = t.sfat.late_drift() <= t.fat.late_drift();
        let acc_ok = pgd_acc(&t.sfat) >= pgd_acc(&t.fat);
        holds += usize::from(drift_ok && acc_ok);
        shown.push(format!(
            "drift {:.4}/{:.4} pgd {:.3}/{:.3}",
            t.sfat.late_drift(),
            t.fat.late_drift(),
            pgd_acc(&t.sfat),
            pgd_acc(&t.fat)
        ));
    }
    outcome(holds >= 4, format!("{holds}/5 seeds; SFAT/FAT {}", shown.join(", ")))
}

fn c11_re_sfat(trios: &[Trio]) -> Outcome {
    let holds = trios.iter().filter(|t| pgd_acc(&t.re) <= pgd_acc(&t.fat)).count();
    let shown: Vec<String> = trios
        .iter()
        .map(|t| format!("{:.3}/{:.3}", pgd_acc(&t.re), pgd_acc(&t.fat)))
        .collect();
    outcome(holds >= 4, format!("{holds}/5 seeds; Re-SFAT/FAT pgd20 {}", shown.join(" ")))
}

fn c12_routing() -> Outcome {
    let hists: Vec<Vec<usize>> = seeds()
        .into_par_iter()
        .map(|seed| {
            let mut cfg = desk_config(seed, AggregationMode::Sfat);
            cfg.rounds = 100;
            trace_topk(&run_ok(&cfg).reports, 5)
        })
        .collect();
    let holds = hists.iter().filter(|h| h.iter().all(|&c| c <= 60)).count();
    let shown: Vec<String> = hists.iter().map(|h| format!("{h:?}")).collect();
    outcome(holds >= 4, format!("{holds}/5 seeds with no client above 60/100; counts {}", shown.join(" ")))
}

fn c13_standard_control() -> Outcome {
    let pairs: Vec<(f64, f64)> = seeds()
        .into_par_iter()
        .map(|seed| {
            let nat = |mode| {
                let mut cfg = desk_config(seed, mode);
                cfg.local.trainer = Trainer::Standard;
                cfg.local.attack.epsilon = 0.0;
                run_ok(&cfg).last_accuracy().unwrap().natural
            };
            (nat(AggregationMode::Sfat), nat(AggregationMode::Fat))
        })
        .collect();
    let holds = pairs.iter().filter(|(s, f)| *s <= f + 0.005).count();
    let shown: Vec<String> = pairs.iter().map(|(s, f)| format!("{s:.3}/{f:.3}")).collect();
    outcome(holds >= 3, format!("{holds}/5 seeds; slack/FedAvg natural {}", shown.join(" ")))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "slack loss lower bound", c1_lower_bound()),
        (2, "monotonicity in α and K̂", c2_monotonicity()),
        (3, "weight simplex and ratio", c3_simplex_and_ratio()),
        (4, "aggregation reductions", c4_reductions()),
        (5, "gradient checks", c5_gradient_checks()),
        (6, "attack invariants", c6_attack_invariants()),
        (7, "partition correctness", c7_partition()),
        (8, "oracle equivalence", c8_oracle()),
        (9, "heterogeneity grows with ε", c9_heterogeneity()),
    ];
    let trios = trios();
    results.push((10, "SFAT vs FAT drift and robustness", c10_sfat_vs_fat(&trios)));
    results.push((11, "Re-SFAT no better than FAT", c11_re_sfat(&trios)));
    results.push((12, "top-client routing", c12_routing()));
    results.push((13, "slack under standard training", c13_standard_control()));

    let mut unexpected = Vec::new();
    for (id, name, o) in &results {
        println!("criterion {id:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        match KNOWN_UNMET.iter().find(|(k, _)| k == id) {
            Some((_, why)) if !o.pass => println!("             known unmet: {why}"),
            None if !o.pass => unexpected.push(*id),
            _ => {}
        }
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("{passed}/{} criteria pass", results.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
