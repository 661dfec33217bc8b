use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ve_adapt::bench::{gen_benchmark_with, read_dataset, write_dataset, stack, Dataset, Domain, Split};
use ve_adapt::checkpoint::{load_checkpoint, save_checkpoint};
use ve_adapt::config::Config;
use ve_adapt::eval::{evaluate, pca_project, run_experiment_grid, write_projection, MetricsRow};
use ve_adapt::selfcheck;
use ve_adapt::train::{train_regime, Regime};
use ve_adapt::Error;

const OVERRIDE_HELP: &str = "\
Any config key can be overridden with --section.key=value, for example
  --bench.classes=20 --train.epochs=10 --grid.seeds=0,1,2 --grid.regimes=ClRS,VeRS
Sections: bench, train, ve, model, routing, pseudo, augment, grid.
Presets: paper-hparams, paper-sec2, long-sequences.
Exit status: 0 success, 1 a run or check failed, 2 invalid configuration.";

#[derive(Parser, Debug)]
#[command(name = "ve-adapt", version, about = "One-shot domain adaptation experiments", after_help = OVERRIDE_HELP)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset applied before the config file; repeatable.
    #[arg(long, global = true)]
    preset: Vec<String>,
    /// Print the resolved config as TOML before running.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the benchmark and write it as a dataset file.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one regime and save its checkpoint and report.
    Train {
        #[arg(long)]
        regime: String,
        /// Dataset file; generated from [bench] when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the target test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Regime id written in the result row.
        #[arg(long, default_value = "checkpoint")]
        label: String,
    },
    /// Project target test embeddings of a checkpoint onto two principal
    /// directions.
    Pca {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "pca")]
        stem: String,
    },
    /// Run the regime × seed grid.
    Grid {
        /// Output directory; overrides grid.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run gradient, KL and invariant self-tests.
    Check {
        /// Random instances for the finite-difference check.
        #[arg(long, default_value_t = 100)]
        instances: u64,
    },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            e => Failure::Run(e.to_string()),
        }
    }
}

/// Pulls `--section.key=value` and `--section.key value` out of argv so clap
/// only sees its own flags.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").map(|s| s.split('=').next().unwrap_or(""));
        match key {
            Some(k) if k.contains('.') => {
                if a.contains('=') {
                    overrides.push(a);
                } else if let Some(v) = it.next() {
                    overrides.push(format!("{a}={v}"));
                } else {
                    overrides.push(a);
                }
            }
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn load_data(cfg: &Config, path: Option<&Path>) -> Result<Dataset, Failure> {
    Ok(match path {
        Some(p) => read_dataset(p)?,
        None => gen_benchmark_with(cfg.grid.exec, &cfg.bench)?,
    })
}

fn run(cli: Cli, overrides: &[String]) -> Result<(), Failure> {
    let mut cfg = Config::load(&cli.preset, cli.config.as_deref(), overrides)?;
    if let Cmd::Grid { out: Some(out) } = &cli.cmd {
        cfg.grid.out_dir = Some(out.clone());
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
    }
    match cli.cmd {
        Cmd::Gen { out } => {
            let data = gen_benchmark_with(cfg.grid.exec, &cfg.bench)?;
            write_dataset(&data, &out)?;
            eprintln!("wrote {} examples to {}", data.examples.len(), out.display());
        }
        Cmd::Train { regime, data, out } => {
            let regime: Regime = regime.parse()?;
            let settings = cfg.train_settings()?;
            let data = load_data(&cfg, data.as_deref())?;
            let start = Instant::now();
            let mut outcome = train_regime(regime, &data, &settings)?;
            let runtime = start.elapsed().as_secs_f64();
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            let ckpt = out.join("model.ckpt");
            save_checkpoint(&outcome.model, &ckpt)?;
            outcome.report.checkpoint = Some(ckpt.display().to_string());
            std::fs::write(out.join("report.csv"), outcome.report.to_csv()).map_err(Error::from)?;
            let json = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
            std::fs::write(out.join("report.json"), json).map_err(Error::from)?;
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            let ev = evaluate(&outcome.model, &data, settings.inference)?;
            println!("{}", MetricsRow::HEADER);
            let row = MetricsRow::new(
                regime.as_str(),
                &cfg.grid.bench_name,
                settings.hyper.seed,
                ev.top1,
                ev.top5,
                runtime,
            );
            println!("{}", row.to_csv_line());
        }
        Cmd::Eval {
            checkpoint,
            data,
            label,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let data = load_data(&cfg, data.as_deref())?;
            let ev = evaluate(&model, &data, cfg.model.inference)?;
            println!("{}", MetricsRow::HEADER);
            let row = MetricsRow::new(&label, &cfg.grid.bench_name, cfg.train.seed, ev.top1, ev.top5, 0.0);
            println!("{}", row.to_csv_line());
            eprintln!("test loss {:.4}", ev.test_loss);
        }
        Cmd::Pca {
            checkpoint,
            data,
            out,
            stem,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let data = load_data(&cfg, data.as_deref())?;
            let test = data.select(Domain::Target, Split::Test);
            let (x, y) = stack(&test)?;
            let emb = model.embedding(&x, cfg.model.inference, cfg.model.embedding_layer)?;
            let proj = pca_project(&emb, &y, 2, cfg.train.seed)?;
            write_projection(&proj, &out, &stem, &stem)?;
            eprintln!(
                "explained variance {:.4} {:.4}; wrote {}",
                proj.explained_variance[0],
                proj.explained_variance[1],
                out.join(format!("{stem}.csv")).display()
            );
        }
        Cmd::Grid { .. } => {
            let grid = cfg.grid_config()?;
            let outcome = run_experiment_grid(&grid)?;
            println!("regime,n,top1_mean,top1_std,top5_mean,top5_std");
            for s in &outcome.summary {
                println!(
                    "{},{},{:.1},{:.1},{:.1},{:.1}",
                    s.regime, s.n, s.top1_mean, s.top1_std, s.top5_mean, s.top5_std
                );
            }
            for r in outcome.runs.iter().filter(|r| r.error.is_some()) {
                eprintln!("failed: {} seed {}: {}", r.regime, r.seed, r.error.as_deref().unwrap_or(""));
            }
            if outcome.failures > 0 {
                return Err(Failure::Run(format!("{} grid runs failed", outcome.failures)));
            }
        }
        Cmd::Check { instances } => {
            let results = selfcheck::run_all(cfg.grid.exec, instances);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                return Err(Failure::Run("self-check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("invalid configuration: {m}");
            ExitCode::from(2)
        }
    }
}
