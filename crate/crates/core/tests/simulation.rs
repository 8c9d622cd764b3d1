mod common;

use common::{brute_force_mean, desk_config, tiny_config};
use slackfed::aggregate::{fedavg_weights, scaffold_server_update, AggregationMode};
use slackfed::data::{make_synthetic, SyntheticSpec};
use slackfed::local::{ControlVariates, RoundContext};
use slackfed::report::emit_metrics;
use slackfed::rng::{stream, Purpose};
use slackfed::{
    fedavg_aggregate, partition, run, run_to_dir, train_local, ClientUpdate, Error, ExperimentConfig, FedOptimizer,
    LocalConfig, Mlp, ParamVector, PartitionSpec, Simulation,
};

#[test]
fn rerun_gives_identical_metrics_file() {
    let cfg = desk_config(0, AggregationMode::Sfat);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to_dir(&cfg, a.path()).unwrap();
    run_to_dir(&cfg, b.path()).unwrap();
    let first = std::fs::read(a.path().join("metrics.csv")).unwrap();
    let second = std::fs::read(b.path().join("metrics.csv")).unwrap();
    assert_eq!(first, second);
    assert_eq!(
        std::fs::read(a.path().join("final.ckpt")).unwrap(),
        std::fs::read(b.path().join("final.ckpt")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = tiny_config(5);
    let on = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run(&cfg).unwrap())
    };
    let one = on(1);
    let four = on(4);
    assert_eq!(one.final_params, four.final_params);
    assert_eq!(one.reports, four.reports);
}

#[test]
fn zero_alpha_and_zero_khat_reduce_to_fat() {
    let mut fat = tiny_config(2);
    fat.aggregation.mode = AggregationMode::Fat;
    let mut alpha0 = tiny_config(2);
    alpha0.aggregation.alpha = 0.0;
    let mut khat0 = tiny_config(2);
    khat0.aggregation.khat = 0;

    let base = run(&fat).unwrap();
    for other in [run(&alpha0).unwrap(), run(&khat0).unwrap()] {
        assert_eq!(other.final_params, base.final_params);
        for (x, y) in other.reports.iter().zip(&base.reports) {
            assert_eq!(x.mean_drift.to_bits(), y.mean_drift.to_bits());
            assert_eq!(x.accuracy, y.accuracy);
            let losses = |r: &slackfed::RoundReport| r.clients.iter().map(|c| c.loss.to_bits()).collect::<Vec<_>>();
            assert_eq!(losses(x), losses(y));
        }
    }
}

#[test]
fn single_update_aggregates_to_itself() {
    let data = make_synthetic(&SyntheticSpec {
        n_per_class: 10,
        classes: 2,
        dim: 3,
        separation: 1.0,
        spread: 0.1,
        seed: 0,
    })
    .unwrap();
    let shards = partition(&data, &PartitionSpec::iid(2, 0)).unwrap();
    let global = Mlp::new(&[3, 4, 2], &mut stream(0, Purpose::Init, &[])).unwrap();
    let ctx = RoundContext {
        seed: 0,
        round: 1,
        total_samples: shards[0].n(),
        control: None,
    };
    let update = train_local(&data, &shards[0], &global, &LocalConfig::default(), &ctx).unwrap();
    let aggregate = fedavg_aggregate(std::slice::from_ref(&update)).unwrap();
    assert_eq!(aggregate, update.params);
    assert_eq!(update.weighted_loss, update.loss);
}

#[test]
fn report_count_and_round_order() {
    let artifact = run(&tiny_config(1)).unwrap();
    assert_eq!(artifact.reports.len(), 4);
    assert_eq!(artifact.round_times.len(), 4);
    for (i, r) in artifact.reports.iter().enumerate() {
        assert_eq!(r.round, i + 1);
        assert_eq!(r.accuracy.is_some(), r.round % 2 == 0);
    }
}

#[test]
fn scaffold_client_variates_average_to_server_variate() {
    let data = make_synthetic(&SyntheticSpec {
        n_per_class: 12,
        classes: 2,
        dim: 3,
        separation: 1.0,
        spread: 0.1,
        seed: 4,
    })
    .unwrap();
    let shards = partition(&data, &PartitionSpec::non_iid(2, 10.0, 4)).unwrap();
    let global = Mlp::new(&[3, 5, 2], &mut stream(4, Purpose::Init, &[])).unwrap();
    let zero = global.params().zeros_like();
    let config = LocalConfig {
        epochs: 2,
        batch_size: 4,
        scaffold: true,
        ..LocalConfig::default()
    };
    let updates: Vec<ClientUpdate> = shards
        .iter()
        .map(|s| {
            let ctx = RoundContext {
                seed: 4,
                round: 1,
                total_samples: data.len(),
                control: Some(ControlVariates {
                    global: &zero,
                    local: &zero,
                }),
            };
            train_local(&data, s, &global, &config, &ctx).unwrap()
        })
        .collect();
    let deltas: Vec<&ParamVector> = updates.iter().map(|u| &u.scaffold.as_ref().unwrap().delta).collect();
    let server = scaffold_server_update(&zero, &deltas, 2).unwrap();
    let controls: Vec<&ParamVector> = updates.iter().map(|u| &u.scaffold.as_ref().unwrap().control).collect();
    for j in 0..server.len() {
        let mean = (controls[0].values()[j] + controls[1].values()[j]) / 2.0;
        assert!((mean - server.values()[j]).abs() <= 1e-12 * (1.0 + mean.abs()));
    }
}

#[test]
fn scaffold_and_fedprox_runs_complete() {
    for optimizer in [FedOptimizer::Scaffold, FedOptimizer::FedProx { mu: 0.01 }] {
        let cfg = ExperimentConfig {
            optimizer,
            ..tiny_config(3)
        };
        let artifact = run(&cfg).unwrap();
        assert!(artifact.final_params.is_finite());
    }
}

#[test]
fn unequal_splits_drive_fedavg_weights() {
    let counts = vec![60, 90, 110, 130, 100];
    let mut cfg = tiny_config(6);
    cfg.dataset = slackfed::DatasetSource::Synthetic {
        n_per_class: 100,
        test_per_class: 10,
        classes: 10,
        dim: 4,
        separation: 1.0,
        spread: 0.1,
        seed: None,
    };
    cfg.partition.clients = 5;
    cfg.partition.skew = 2.0;
    cfg.partition.sample_counts = Some(counts.clone());
    cfg.aggregation.mode = AggregationMode::Fat;
    let sim = Simulation::new(cfg.clone()).unwrap();
    assert_eq!(sim.shards.iter().map(|s| s.n()).collect::<Vec<_>>(), counts);

    let global = sim.initial_model().unwrap();
    let total: usize = counts.iter().sum();
    let local = cfg.resolved_local();
    let updates: Vec<ClientUpdate> = sim
        .shards
        .iter()
        .map(|s| {
            let ctx = RoundContext {
                seed: cfg.seed,
                round: 1,
                total_samples: total,
                control: None,
            };
            train_local(&sim.train, s, &global, &local, &ctx).unwrap()
        })
        .collect();
    let w = fedavg_weights(&updates);
    for (wk, &n) in w.iter().zip(&counts) {
        assert!((wk - n as f64 / total as f64).abs() < 1e-15);
    }
    let thetas: Vec<Vec<f64>> = updates.iter().map(|u| u.params.values().to_vec()).collect();
    let coefficients: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    let oracle = brute_force_mean(&thetas, &coefficients);
    let got = fedavg_aggregate(&updates).unwrap();
    for (a, b) in got.values().iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn partial_participation_run() {
    let mut cfg = tiny_config(8);
    cfg.participation = 0.5;
    let artifact = run(&cfg).unwrap();
    for r in &artifact.reports {
        assert_eq!(r.clients.len(), 2);
        assert!(r.top.len() <= 1);
    }
}

#[test]
fn divergence_keeps_last_good_model() {
    let mut cfg = tiny_config(9);
    cfg.local.sgd.lr = 1e200;
    cfg.local.sgd.momentum = 0.0;
    let dir = tempfile::tempdir().unwrap();
    let err = run_to_dir(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(err, Error::Round { .. } | Error::Divergence { .. }));
    if let Error::Divergence { .. } = err {
        assert!(dir.path().join("last_good.ckpt").exists());
    }
}

#[test]
fn emit_metrics_writes_all_files() {
    let artifact = run(&tiny_config(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_metrics(&artifact, dir.path()).unwrap();
    for f in ["metrics.csv", "config.json", "final.ckpt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let snapshot: ExperimentConfig =
        serde_json::from_slice(&std::fs::read(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot, artifact.config);
}
