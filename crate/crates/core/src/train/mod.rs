//! Training regimes of the experiment matrix.
//!
//! | regime      | encoders | data                                            |
//! |-------------|----------|-------------------------------------------------|
//! | `ClR`       | one      | k-shot real                                     |
//! | `ClRS`      | one      | k-shot real + synthetic                         |
//! | `ClRSAug`   | one      | `ClRS` + speed/pad augmented real               |
//! | `VeR`       | two      | both pools k-shot real                          |
//! | `VeRS`      | two      | routed pools (default: real → source, real+synthetic → target) |
//! | `VeRSMod`   | two      | `VeRS` with the bridging loss weight set to 0   |
//! | `VeRSAug`   | two      | `VeRS` with augmented real examples             |
//! | `PseudoLabel` | one    | `ClRS` plus self-labeled unlabeled real clips   |
//!
//! In the benchmark, "synthetic" is the abundant source domain and "real"
//! the one-shot target domain.

mod classify;
mod gradstop;
mod pairs;
mod pseudo;
mod report;
mod ve;

pub use classify::train_classification;
pub(crate) use classify::mean_cross_entropy;
pub use gradstop::{verify_gradient_stop, verify_gradient_stop_with, Barrier, GradStopReport};
pub use pairs::{PairSampler, PairIndex};
pub use pseudo::{pseudo_label_loop, PseudoOutcome, PseudoSettings, PseudoWarning};
pub use report::{EpochRecord, TrainReport};
pub use ve::train_ve;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{speed_augment, temporal_pad_augment, Dataset, Domain, Example, Split};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, EncoderChoice, Model};
use crate::optim::TrainHyper;
use crate::ve::VeHyper;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    ClR,
    ClRS,
    VeR,
    VeRS,
    VeRSMod,
    ClRSAug,
    VeRSAug,
    PseudoLabel,
}

impl Regime {
    pub const ALL: [Regime; 8] = [
        Regime::ClR,
        Regime::ClRS,
        Regime::VeR,
        Regime::VeRS,
        Regime::VeRSMod,
        Regime::ClRSAug,
        Regime::VeRSAug,
        Regime::PseudoLabel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::ClR => "ClR",
            Regime::ClRS => "ClRS",
            Regime::VeR => "VeR",
            Regime::VeRS => "VeRS",
            Regime::VeRSMod => "VeRSMod",
            Regime::ClRSAug => "ClRSAug",
            Regime::VeRSAug => "VeRSAug",
            Regime::PseudoLabel => "PseudoLabel",
        }
    }

    pub fn is_ve(self) -> bool {
        matches!(
            self,
            Regime::VeR | Regime::VeRS | Regime::VeRSMod | Regime::VeRSAug
        )
    }

    pub fn is_augmented(self) -> bool {
        matches!(self, Regime::ClRSAug | Regime::VeRSAug)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Regime::ALL
            .iter()
            .copied()
            .find(|r| r.as_str().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

/// Which examples feed an encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolKind {
    /// The k labeled real (target-domain) clips per class.
    OneShotReal,
    /// Source-domain training clips.
    Synthetic,
    RealSynthetic,
}

impl PoolKind {
    pub fn includes_synthetic(self) -> bool {
        !matches!(self, PoolKind::OneShotReal)
    }
}

/// Assignment of data pools to the two encoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingPolicy {
    pub source_pool: PoolKind,
    pub target_pool: PoolKind,
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        Self::experiments()
    }
}

impl RoutingPolicy {
    /// One-shot real clips through the source encoder, real + synthetic
    /// through the target encoder.
    pub fn experiments() -> Self {
        Self {
            source_pool: PoolKind::OneShotReal,
            target_pool: PoolKind::RealSynthetic,
        }
    }

    /// Swapped roles: the abundant pool is the source, the one-shot pool the
    /// target. Training through a synthetic-only source encoder tends to be
    /// unstable.
    pub fn abundant_source() -> Self {
        Self {
            source_pool: PoolKind::Synthetic,
            target_pool: PoolKind::OneShotReal,
        }
    }

    pub fn one_shot_only() -> Self {
        Self {
            source_pool: PoolKind::OneShotReal,
            target_pool: PoolKind::OneShotReal,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "experiments" | "paper-sec3" => Ok(Self::experiments()),
            "abundant-source" | "paper-sec2" => Ok(Self::abundant_source()),
            "one-shot" => Ok(Self::one_shot_only()),
            _ => Err(Error::Config(format!("unknown routing preset {name:?}"))),
        }
    }

    pub fn unstable(&self) -> bool {
        self.source_pool == PoolKind::Synthetic
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub speed_factors: Vec<f64>,
    pub pad: bool,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            speed_factors: vec![1.2, 0.8],
            pad: true,
        }
    }
}

/// Everything a single run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub hyper: TrainHyper,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub ve: VeHyper,
    pub routing: RoutingPolicy,
    /// Run the gradient-stop check every this many steps (0 disables).
    pub grad_stop_every: usize,
    pub inference: EncoderChoice,
    pub pseudo: PseudoSettings,
    pub augment: AugmentSettings,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hyper: TrainHyper::default(),
            hidden_dims: vec![64, 64],
            embed_dim: 64,
            ve: VeHyper::default(),
            routing: RoutingPolicy::default(),
            grad_stop_every: 0,
            inference: EncoderChoice::Source,
            pseudo: PseudoSettings::default(),
            augment: AugmentSettings::default(),
        }
    }
}

impl TrainSettings {
    pub fn arch_for(&self, data: &Dataset) -> ArchConfig {
        ArchConfig {
            input_dim: data.input_dim(),
            hidden_dims: self.hidden_dims.clone(),
            embed_dim: self.embed_dim,
            classes: data.classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.ve.validate()?;
        self.pseudo.validate()?;
        if self.augment.speed_factors.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("speed factors must be > 0".into()));
        }
        Ok(())
    }
}

/// A trained model with its training history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
}

/// Trains `regime` on `data` and returns the model plus its report.
pub fn train_regime(regime: Regime, data: &Dataset, settings: &TrainSettings) -> Result<TrainOutcome> {
    settings.validate()?;
    match regime {
        Regime::ClR | Regime::ClRS | Regime::ClRSAug => {
            let (model, report) = train_classification(regime, data, settings)?;
            Ok(TrainOutcome {
                model: Model::Classifier(model),
                report,
            })
        }
        Regime::VeR | Regime::VeRS | Regime::VeRSMod | Regime::VeRSAug => {
            let routing = if regime == Regime::VeR {
                RoutingPolicy::one_shot_only()
            } else {
                settings.routing
            };
            let (model, report) = train_ve(regime, data, routing, settings)?;
            Ok(TrainOutcome {
                model: Model::Ve(model),
                report,
            })
        }
        Regime::PseudoLabel => {
            let labeled = training_pool(data, PoolKind::RealSynthetic);
            let unlabeled = data.select(Domain::Target, Split::Test);
            let out = pseudo_label_loop(&labeled, &unlabeled, data, settings)?;
            Ok(TrainOutcome {
                model: Model::Classifier(out.model),
                report: out.report,
            })
        }
    }
}

/// Training examples for a pool kind, in dataset order.
pub fn training_pool(data: &Dataset, kind: PoolKind) -> Vec<&Example> {
    let real = data.select(Domain::Target, Split::Train);
    let synth = data.select(Domain::Source, Split::Train);
    match kind {
        PoolKind::OneShotReal => real,
        PoolKind::Synthetic => synth,
        PoolKind::RealSynthetic => real.into_iter().chain(synth).collect(),
    }
}

/// A training pool entry: an owned example and whether it receives random
/// temporal padding each time it is drawn.
#[derive(Clone, Debug)]
pub(crate) struct PoolItem {
    pub example: Example,
    pub pad: bool,
}

/// Materializes a pool, adding speed-augmented copies of the real clips
/// when `augment` is set.
pub(crate) fn materialize(
    data: &Dataset,
    kind: PoolKind,
    augment: Option<&AugmentSettings>,
) -> Result<Vec<PoolItem>> {
    let mut items = Vec::new();
    for e in training_pool(data, kind) {
        let is_real = e.domain == Domain::Target;
        let pad = augment.is_some_and(|a| a.pad) && is_real;
        items.push(PoolItem {
            example: e.clone(),
            pad,
        });
        if let (Some(a), true) = (augment, is_real) {
            for &f in &a.speed_factors {
                items.push(PoolItem {
                    example: speed_augment(e, f)?,
                    pad: a.pad,
                });
            }
        }
    }
    Ok(items)
}

pub(crate) fn draw_features<R: Rng>(
    item: &PoolItem,
    rng: &mut R,
    pad_max: usize,
) -> Result<Vec<f64>> {
    if !item.pad {
        return Ok(item.example.features.clone());
    }
    let max_len = item.example.max_len();
    let room = (max_len - item.example.content_len) / 2;
    let (padded, _) = temporal_pad_augment(&item.example, rng, max_len, pad_max.min(room))?;
    Ok(padded.features)
}

/// Configured pad limit, or the largest symmetric pad that fits unwarped
/// content when the dataset came from a file.
pub(crate) fn pad_max(data: &Dataset) -> usize {
    data.config
        .as_ref()
        .map_or((data.max_len - data.frames) / 2, |c| c.pad_max)
}
