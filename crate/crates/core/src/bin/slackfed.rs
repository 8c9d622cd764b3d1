use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use slackfed::attack::AttackSpec;
use slackfed::data::{load_csv, load_idx};
use slackfed::partition::{class_counts, partition};
use slackfed::report::{read_checkpoint_file, read_metrics, topk_histogram};
use slackfed::sweep::{run_sweep, summarize};
use slackfed::{evaluate, run_to_dir, Error, EvalAttack, ExperimentConfig, Mlp, Result, SweepParam};

#[derive(Parser)]
#[command(name = "slackfed", version, about = "Federated adversarial training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, config.json and final.ckpt.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partition utilities.
    Partition {
        #[command(subcommand)]
        action: PartitionAction,
    },
    /// Evaluate a checkpoint on a test set (CSV, or IDX images with --labels).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "none")]
        attack: AttackKind,
        #[arg(long, default_value_t = 8.0 / 255.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 2.0 / 255.0)]
        step_size: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a seeded grid over one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: ParamArg,
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count how often each client was up-weighted in a finished run.
    TraceTopk {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum PartitionAction {
    /// Print per-client, per-class sample counts.
    Inspect {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    None,
    Fgsm,
    Pgd20,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Alpha,
    Khat,
    Epsilon,
    Clients,
    Ratio,
}

impl From<ParamArg> for SweepParam {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::Alpha => SweepParam::Alpha,
            ParamArg::Khat => SweepParam::Khat,
            ParamArg::Epsilon => SweepParam::Epsilon,
            ParamArg::Clients => SweepParam::Clients,
            ParamArg::Ratio => SweepParam::Ratio,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(format!("seed{}", cfg.seed)));
            let artifact = run_to_dir(&cfg, &dir)?;
            if let Some(acc) = artifact.last_accuracy() {
                println!(
                    "natural {:.4}  fgsm {:.4}  pgd20 {:.4}",
                    acc.natural, acc.fgsm, acc.pgd20
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Partition {
            action: PartitionAction::Inspect { config },
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let (train, _) = cfg.dataset.load(cfg.seed, None)?;
            let shards = partition(&train, &cfg.partition_spec())?;
            let counts = class_counts(&train, &shards);
            print!("client");
            for c in 0..train.classes() {
                print!(",class{c}");
            }
            println!(",total");
            for (shard, row) in shards.iter().zip(&counts) {
                print!("{}", shard.id);
                for n in row {
                    print!(",{n}");
                }
                println!(",{}", shard.n());
            }
        }
        Command::Eval {
            checkpoint,
            test,
            labels,
            attack,
            epsilon,
            step_size,
            seed,
        } => {
            let model = Mlp::from_params(read_checkpoint_file(&checkpoint)?)?;
            let data = match labels {
                Some(labels) => load_idx(&test, &labels)?,
                None => load_csv(&test)?,
            };
            let spec = AttackSpec {
                epsilon,
                step_size,
                ..AttackSpec::cifar()
            };
            spec.validate()?;
            let attack = match attack {
                AttackKind::None => EvalAttack::None,
                AttackKind::Fgsm => EvalAttack::Fgsm(spec),
                AttackKind::Pgd20 => EvalAttack::Pgd(spec.with_steps(20)),
            };
            println!("{:.6}", evaluate(&model, &data, attack, seed)?);
        }
        Command::Sweep {
            config,
            param,
            values,
            seeds,
            out,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let points = run_sweep(&cfg, param.into(), &values, seeds)?;
            let param = SweepParam::from(param);
            println!("{param},natural,fgsm,pgd20,late_drift");
            for (value, acc, drift) in summarize(&points) {
                println!("{value},{:.4},{:.4},{:.4},{:.6}", acc.natural, acc.fgsm, acc.pgd20, drift);
            }
            if let Some(path) = out {
                let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(e.to_string()))?;
                w.write_record(["param", "value", "seed", "nat_acc", "fgsm_acc", "pgd20_acc", "late_drift"])
                    .map_err(|e| Error::Format(e.to_string()))?;
                for p in &points {
                    w.write_record([
                        p.param.to_string(),
                        p.value.to_string(),
                        p.seed.to_string(),
                        p.accuracy.natural.to_string(),
                        p.accuracy.fgsm.to_string(),
                        p.accuracy.pgd20.to_string(),
                        p.late_drift.to_string(),
                    ])
                    .map_err(|e| Error::Format(e.to_string()))?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::TraceTopk { run } => {
            let rows = read_metrics(&run.join("metrics.csv"))?;
            let rounds = rows.iter().filter(|r| r.is_aggregate()).count().max(1);
            println!("client,top_rounds,share");
            for (client, hits) in topk_histogram(&rows).into_iter().enumerate() {
                let bar = "#".repeat(hits * 40 / rounds);
                println!("{client},{hits},{:.3} {bar}", hits as f64 / rounds as f64);
            }
        }
    }
    Ok(())
}
