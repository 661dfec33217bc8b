//! Regime × seed experiment grids.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate, pca_project, write_projection};
use crate::bench::{gen_benchmark_with, stack, BenchConfig, Dataset, Domain, Split};
use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{EmbeddingLayer, EncoderChoice};
use crate::train::{train_regime, Regime, TrainReport, TrainSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Benchmark id written to every result row.
    pub bench_name: String,
    pub bench: BenchConfig,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    pub train: TrainSettings,
    pub out_dir: Option<PathBuf>,
    /// Regimes whose test-set embeddings are projected and plotted.
    pub pca_regimes: Vec<Regime>,
    pub embedding_layer: EmbeddingLayer,
    /// Record real wall times in the results table. Off by default so
    /// reruns produce byte-identical tables; times always go to the manifest.
    pub timing: bool,
    pub exec: Exec,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            bench_name: "default".into(),
            bench: BenchConfig::default(),
            regimes: vec![
                Regime::ClR,
                Regime::ClRS,
                Regime::VeR,
                Regime::VeRS,
                Regime::VeRSMod,
            ],
            seeds: (0..5).collect(),
            train: TrainSettings::default(),
            out_dir: None,
            pca_regimes: vec![Regime::ClRS, Regime::VeRS],
            embedding_layer: EmbeddingLayer::Pre,
            timing: false,
            exec: Exec::default(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one regime and one seed".into()));
        }
        if self.bench_name.is_empty() || self.bench_name.contains([',', '\n']) {
            return Err(Error::Config("bench_name must be non-empty without commas".into()));
        }
        self.bench.validate()?;
        self.train.validate()
    }
}

/// One line of the results table. Percentages and runtime are kept at one
/// decimal so the table parses back to equal rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub regime: String,
    pub bench: String,
    pub seed: u64,
    pub top1: f64,
    pub top5: f64,
    pub runtime_s: f64,
}

fn one_decimal(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

impl MetricsRow {
    pub const HEADER: &'static str = "regime,bench,seed,top1,top5,runtime_s";

    pub fn new(regime: &str, bench: &str, seed: u64, top1: f64, top5: f64, runtime_s: f64) -> Self {
        Self {
            regime: regime.into(),
            bench: bench.into(),
            seed,
            top1: one_decimal(top1),
            top5: one_decimal(top5),
            runtime_s: one_decimal(runtime_s),
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{:.1},{:.1},{:.1}",
            self.regime, self.bench, self.seed, self.top1, self.top5, self.runtime_s
        )
    }

    pub fn to_csv(rows: &[MetricsRow]) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in rows {
            s.push_str(&r.to_csv_line());
            s.push('\n');
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == Self::HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    detail: format!("expected header {:?}", Self::HEADER),
                })
            }
        }
        lines
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, line)| {
                let err = |d: &str| Error::Parse {
                    line: i + 1,
                    detail: d.into(),
                };
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(err("expected 6 fields"));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
                Ok(MetricsRow {
                    regime: f[0].into(),
                    bench: f[1].into(),
                    seed: f[2].parse().map_err(|_| err("bad seed"))?,
                    top1: num(f[3])?,
                    top5: num(f[4])?,
                    runtime_s: num(f[5])?,
                })
            })
            .collect()
    }
}

/// Outcome of one (regime, seed) cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridRun {
    pub regime: Regime,
    pub seed: u64,
    pub bench_seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub test_loss: Option<f64>,
    /// Mean test loss over the last quarter of epochs (inference path).
    pub test_loss_final_quartile: Option<f64>,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: String,
    pub n: usize,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub top5_mean: f64,
    pub top5_std: f64,
    pub test_loss_final_quartile_mean: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub crate_version: String,
    pub config: GridConfig,
    pub runs: Vec<GridRun>,
    pub summary: Vec<SummaryRow>,
    pub failures: usize,
    pub total_wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub rows: Vec<MetricsRow>,
    pub runs: Vec<GridRun>,
    pub summary: Vec<SummaryRow>,
    pub failures: usize,
}

impl GridOutcome {
    pub fn summary_for(&self, regime: Regime) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.regime == regime.as_str())
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean ± sample standard deviation per regime over successful runs, in
/// first-appearance order.
pub fn summarize(runs: &[GridRun]) -> Vec<SummaryRow> {
    let mut order: Vec<Regime> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&GridRun>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.error.is_none()) {
        if !order.contains(&r.regime) {
            order.push(r.regime);
        }
        groups.entry(r.regime.as_str()).or_default().push(r);
    }
    order
        .iter()
        .map(|reg| {
            let g = &groups[reg.as_str()];
            let pick = |f: fn(&GridRun) -> Option<f64>| g.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let (t1m, t1s) = mean_std(&pick(|r| r.top1));
            let (t5m, t5s) = mean_std(&pick(|r| r.top5));
            let (lm, _) = mean_std(&pick(|r| r.test_loss_final_quartile));
            SummaryRow {
                regime: reg.to_string(),
                n: g.len(),
                top1_mean: t1m,
                top1_std: t1s,
                top5_mean: t5m,
                top5_std: t5s,
                test_loss_final_quartile_mean: lm,
            }
        })
        .collect()
}

fn summary_csv(bench: &str, rows: &[SummaryRow]) -> String {
    let mut s = String::from("regime,bench,n,top1_mean,top1_std,top5_mean,top5_std\n");
    for r in rows {
        writeln!(
            s,
            "{},{bench},{},{:.1},{:.1},{:.1},{:.1}",
            r.regime, r.n, r.top1_mean, r.top1_std, r.top5_mean, r.top5_std
        )
        .expect("string write");
    }
    s
}

fn final_quartile(report: &TrainReport, choice: EncoderChoice) -> Option<f64> {
    let n = report.epochs.len();
    let tail = &report.epochs[n - n.div_ceil(4).min(n)..];
    let vals: Vec<f64> = tail
        .iter()
        .filter_map(|e| match choice {
            EncoderChoice::Target => e.test_loss_target.or(e.test_loss_source),
            EncoderChoice::Source => e.test_loss_source,
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn run_cell(cfg: &GridConfig, data: &Dataset, regime: Regime, seed: u64, bench_seed: u64) -> GridRun {
    let start = Instant::now();
    let mut run = GridRun {
        regime,
        seed,
        bench_seed,
        status: "ok".into(),
        error: None,
        top1: None,
        top5: None,
        test_loss: None,
        test_loss_final_quartile: None,
        wall_time_s: 0.0,
        warnings: Vec::new(),
    };
    let result = (|| -> Result<()> {
        let mut settings = cfg.train.clone();
        settings.hyper.seed = seed;
        let mut out = train_regime(regime, data, &settings)?;
        let choice = settings.inference;
        let ev = evaluate(&out.model, data, choice)?;
        run.top1 = Some(ev.top1);
        run.top5 = Some(ev.top5);
        run.test_loss = Some(ev.test_loss);
        run.test_loss_final_quartile = final_quartile(&out.report, choice);
        run.warnings = out.report.warnings.clone();
        if let Some(dir) = &cfg.out_dir {
            let rdir = dir.join("runs").join(format!("{regime}-s{seed}"));
            std::fs::create_dir_all(&rdir)?;
            let ckpt = rdir.join("model.ckpt");
            save_checkpoint(&out.model, &ckpt)?;
            out.report.checkpoint = Some(ckpt.display().to_string());
            std::fs::write(rdir.join("report.csv"), out.report.to_csv())?;
            if cfg.pca_regimes.contains(&regime) {
                let test = data.select(Domain::Target, Split::Test);
                let (x, y) = stack(&test)?;
                let emb = out.model.embedding(&x, choice, cfg.embedding_layer)?;
                let proj = pca_project(&emb, &y, 2, seed)?;
                write_projection(&proj, &rdir, "pca", &format!("{regime} seed {seed}"))?;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        run.status = "failed".into();
        run.error = Some(e.to_string());
    }
    run.wall_time_s = start.elapsed().as_secs_f64();
    run
}

/// Generates one benchmark per seed, trains and evaluates every
/// (regime, seed) cell, and writes tables, per-run artifacts and a manifest
/// when `out_dir` is set. Failed cells are recorded and skipped.
pub fn run_experiment_grid(cfg: &GridConfig) -> Result<GridOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let bench_seeds: Vec<u64> = cfg.seeds.iter().map(|s| cfg.bench.seed.wrapping_add(*s)).collect();
    // runs are the parallel unit; generation inside each stays sequential
    let datasets = cfg.exec.map(&bench_seeds, |&seed| {
        gen_benchmark_with(
            Exec::Sequential,
            &BenchConfig {
                seed,
                ..cfg.bench.clone()
            },
        )
    });
    let datasets: Vec<Dataset> = datasets.into_iter().collect::<Result<_>>()?;
    let cells: Vec<(Regime, usize)> = cfg
        .regimes
        .iter()
        .flat_map(|&r| (0..cfg.seeds.len()).map(move |i| (r, i)))
        .collect();
    let runs = cfg.exec.map(&cells, |&(regime, i)| {
        run_cell(cfg, &datasets[i], regime, cfg.seeds[i], bench_seeds[i])
    });

    let rows: Vec<MetricsRow> = runs
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| {
            MetricsRow::new(
                r.regime.as_str(),
                &cfg.bench_name,
                r.seed,
                r.top1.unwrap_or(0.0),
                r.top5.unwrap_or(0.0),
                if cfg.timing { r.wall_time_s } else { 0.0 },
            )
        })
        .collect();
    let summary = summarize(&runs);
    let failures = runs.iter().filter(|r| r.error.is_some()).count();
    if let Some(dir) = &cfg.out_dir {
        write_outputs(dir, cfg, &rows, &runs, &summary, failures, start.elapsed().as_secs_f64())?;
    }
    Ok(GridOutcome {
        rows,
        runs,
        summary,
        failures,
    })
}

fn write_outputs(
    dir: &Path,
    cfg: &GridConfig,
    rows: &[MetricsRow],
    runs: &[GridRun],
    summary: &[SummaryRow],
    failures: usize,
    total: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), MetricsRow::to_csv(rows))?;
    std::fs::write(dir.join("summary.csv"), summary_csv(&cfg.bench_name, summary))?;
    let manifest = RunManifest {
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        runs: runs.to_vec(),
        summary: summary.to_vec(),
        failures,
        total_wall_time_s: total,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}
