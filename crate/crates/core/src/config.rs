//! Run configuration: a TOML file with one table per section, named presets
//! and `--section.key=value` overrides.
//!
//! ```toml
//! [bench]     # BenchConfig
//! classes = 100
//! [train]     # optimizer and schedule
//! epochs = 60
//! [ve]        # loss weights
//! [model]     # hidden_dims, embed_dim, inference, embedding_layer
//! [routing]   # preset and/or source_pool, target_pool
//! [pseudo]
//! [augment]
//! [grid]      # bench_name, regimes, seeds, out_dir, pca_regimes, ...
//! ```
//!
//! Layers apply in order: built-in defaults, presets, the file, then
//! overrides. Every key is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::bench::BenchConfig;
use crate::error::{Error, Result};
use crate::eval::GridConfig;
use crate::exec::Exec;
use crate::model::{EmbeddingLayer, EncoderChoice};
use crate::optim::TrainHyper;
use crate::train::{AugmentSettings, PoolKind, PseudoSettings, Regime, RoutingPolicy, TrainSettings};
use crate::ve::VeHyper;

pub const PRESETS: [&str; 3] = ["paper-hparams", "paper-sec2", "long-sequences"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub inference: EncoderChoice,
    pub embedding_layer: EmbeddingLayer,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            hidden_dims: t.hidden_dims,
            embed_dim: t.embed_dim,
            inference: t.inference,
            embedding_layer: EmbeddingLayer::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingSection {
    /// `experiments` (alias `paper-sec3`), `abundant-source` (alias
    /// `paper-sec2`) or `one-shot`.
    pub preset: String,
    pub source_pool: Option<PoolKind>,
    pub target_pool: Option<PoolKind>,
}

impl Default for RoutingSection {
    fn default() -> Self {
        Self {
            preset: "experiments".into(),
            source_pool: None,
            target_pool: None,
        }
    }
}

impl RoutingSection {
    pub fn policy(&self) -> Result<RoutingPolicy> {
        let mut p = RoutingPolicy::preset(&self.preset)?;
        if let Some(s) = self.source_pool {
            p.source_pool = s;
        }
        if let Some(t) = self.target_pool {
            p.target_pool = t;
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub bench_name: String,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub pca_regimes: Vec<Regime>,
    pub timing: bool,
    pub exec: Exec,
    /// Run the gradient-stop verifier every this many VE steps (0 = never).
    pub grad_stop_every: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridConfig::default();
        Self {
            bench_name: g.bench_name,
            regimes: g.regimes,
            seeds: g.seeds,
            out_dir: None,
            pca_regimes: g.pca_regimes,
            timing: g.timing,
            exec: g.exec,
            grad_stop_every: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bench: BenchConfig,
    pub train: TrainHyper,
    pub ve: VeHyper,
    pub model: ModelSection,
    pub routing: RoutingSection,
    pub pseudo: PseudoSettings,
    pub augment: AugmentSettings,
    pub grid: GridSection,
}

fn preset_table(name: &str) -> Result<Table> {
    let section = |name: &str, v: Value| {
        let mut t = Table::new();
        t.insert(name.into(), v);
        t
    };
    match name {
        "paper-hparams" => Ok(section(
            "train",
            Value::try_from(TrainHyper::paper_hparams()).expect("serializable"),
        )),
        "paper-sec2" => Ok(toml::toml! {
            [routing]
            preset = "paper-sec2"
        }),
        "long-sequences" => {
            let b = BenchConfig::long_sequences();
            Ok(toml::toml! {
                [bench]
                frames = (b.frames as i64)
                max_len = (b.max_len as i64)
                pad_max = (b.pad_max as i64)
            })
        }
        _ => Err(Error::Config(format!(
            "unknown preset {name:?} (known: {})",
            PRESETS.join(", ")
        ))),
    }
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses an override value the way a TOML literal would read, falling back
/// to a bare string. `like` is the current value at that key and decides
/// list and float coercions, so `--grid.seeds=3` and `--train.lr_base=1`
/// both work.
fn parse_value(raw: &str, like: Option<&Value>) -> Value {
    let scalar = |s: &str| -> Value {
        let s = s.trim();
        match format!("v = {s}").parse::<Table>() {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => Value::String(s.to_string()),
        }
    };
    let coerce = |v: Value, like: Option<&Value>| match (v, like) {
        (Value::Integer(i), Some(Value::Float(_))) => Value::Float(i as f64),
        (v, _) => v,
    };
    match like {
        Some(Value::Array(items)) => {
            let inner = raw.trim().trim_start_matches('[').trim_end_matches(']');
            let elem = items.first();
            Value::Array(
                inner
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| coerce(scalar(s), elem))
                    .collect(),
            )
        }
        _ => coerce(scalar(raw), like),
    }
}

/// Applies one `section.key=value` override (the leading `--` optional).
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let spec = spec.trim_start_matches("--");
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} needs the form section.key=value")))?;
    let (section, key) = path
        .split_once('.')
        .filter(|(s, k)| !s.is_empty() && !k.is_empty() && !k.contains('.'))
        .ok_or_else(|| Error::Config(format!("override key {path:?} needs the form section.key")))?;
    let sec = table
        .entry(section)
        .or_insert_with(|| Value::Table(Table::new()))
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{section} is not a section")))?;
    let value = parse_value(raw, sec.get(key));
    sec.insert(key.to_string(), value);
    Ok(())
}

impl Config {
    /// Resolves defaults, presets, an optional file and overrides into a
    /// validated config.
    pub fn load(presets: &[String], file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = Table::try_from(Config::default())
            .map_err(|e| Error::Config(format!("default config: {e}")))?;
        for p in presets {
            merge(&mut table, preset_table(p)?);
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
            let t: Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, t);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().replace("\nin ", " in ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train_settings(&self) -> Result<TrainSettings> {
        Ok(TrainSettings {
            hyper: self.train.clone(),
            hidden_dims: self.model.hidden_dims.clone(),
            embed_dim: self.model.embed_dim,
            ve: self.ve.clone(),
            routing: self.routing.policy()?,
            grad_stop_every: self.grid.grad_stop_every,
            inference: self.model.inference,
            pseudo: self.pseudo.clone(),
            augment: self.augment.clone(),
        })
    }

    pub fn grid_config(&self) -> Result<GridConfig> {
        let g = &self.grid;
        Ok(GridConfig {
            bench_name: g.bench_name.clone(),
            bench: self.bench.clone(),
            regimes: g.regimes.clone(),
            seeds: g.seeds.clone(),
            train: self.train_settings()?,
            out_dir: g.out_dir.clone(),
            pca_regimes: g.pca_regimes.clone(),
            embedding_layer: self.model.embedding_layer,
            timing: g.timing,
            exec: g.exec,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_config()?.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(presets: &[&str], overrides: &[&str]) -> Result<Config> {
        let p: Vec<String> = presets.iter().map(|s| s.to_string()).collect();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        Config::load(&p, None, &o)
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        let back: Config = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(load(&[], &[]).unwrap(), c);
    }

    #[test]
    fn overrides_coerce_types() {
        let c = load(
            &[],
            &[
                "--bench.classes=7",
                "--train.lr_base=1",
                "--grid.seeds=3",
                "--grid.regimes=ClR,VeRS",
                "--model.hidden_dims=[32, 16]",
                "--model.inference=target",
                "--routing.preset=one-shot",
                "--augment.speed_factors=2",
            ],
        )
        .unwrap();
        assert_eq!(c.bench.classes, 7);
        assert_eq!(c.train.lr_base, 1.0);
        assert_eq!(c.grid.seeds, vec![3]);
        assert_eq!(c.grid.regimes, vec![Regime::ClR, Regime::VeRS]);
        assert_eq!(c.model.hidden_dims, vec![32, 16]);
        assert_eq!(c.model.inference, EncoderChoice::Target);
        assert_eq!(c.train_settings().unwrap().routing, RoutingPolicy::one_shot_only());
        assert_eq!(c.augment.speed_factors, vec![2.0]);
    }

    #[test]
    fn presets_layer_under_overrides() {
        let c = load(&["paper-hparams"], &["--train.epochs=3"]).unwrap();
        assert_eq!(c.train.lr_base, 3e-5);
        assert_eq!(c.train.weight_decay, 1e-4);
        assert_eq!(c.train.epochs, 3);
        let c = load(&["paper-sec2"], &[]).unwrap();
        assert!(c.train_settings().unwrap().routing.unstable());
        let c = load(&["long-sequences"], &[]).unwrap();
        assert_eq!((c.bench.max_len, c.bench.pad_max), (85, 20));
    }

    #[test]
    fn invalid_inputs_are_config_errors() {
        for bad in [
            &["--bench.nope=1"][..],
            &["--bench.classes=many"],
            &["--grid.seeds=[]"],
            &["classes=3"],
            &["--routing.preset=sideways"],
            &["--train.epochs=0"],
        ] {
            assert!(matches!(load(&[], bad), Err(Error::Config(_))), "{bad:?}");
        }
        assert!(matches!(load(&["fast"], &[]), Err(Error::Config(_))));
    }

    #[test]
    fn file_layer_sits_between_presets_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nepochs = 9\nlr_base = 0.01\n[grid]\nregimes = [\"ClRS\"]\n").unwrap();
        let c = Config::load(
            &["paper-hparams".into()],
            Some(&path),
            &["--train.lr_base=0.02".into()],
        )
        .unwrap();
        assert_eq!(c.train.epochs, 9);
        assert_eq!(c.train.lr_base, 0.02);
        assert_eq!(c.train.weight_decay, 1e-4);
        assert_eq!(c.grid.regimes, vec![Regime::ClRS]);
    }
}
