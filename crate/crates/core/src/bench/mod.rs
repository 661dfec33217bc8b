//! Seeded synthetic domain-shift benchmark.
//!
//! Each class owns a smooth prototype trajectory of `frames × dims` values.
//! The abundant *source* domain renders prototypes through the identity
//! map; the scarce *target* domain renders them through a fixed random
//! affine map (the domain gap) plus a per-example style offset. Both domains
//! share per-example time warps and additive noise.

mod augment;
mod generate;
mod io;

pub use augment::{speed_augment, temporal_pad_augment, PadInfo};
pub use generate::{derive_seed, gen_benchmark, gen_benchmark_with, nearest_centroid_oracle, OracleReport};
pub use io::{read_dataset, write_dataset};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One labeled sequence, stored as `max_len × dims` row-major frames. Frames
/// past `content_len` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub content_len: usize,
    pub dims: usize,
    pub label: usize,
    pub domain: Domain,
    pub split: Split,
}

impl Example {
    pub fn max_len(&self) -> usize {
        self.features.len() / self.dims
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.features[t * self.dims..(t + 1) * self.dims]
    }

    pub fn content(&self) -> &[f64] {
        &self.features[..self.content_len * self.dims]
    }
}

/// Benchmark shape, domain-gap strength and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub classes: usize,
    pub frames: usize,
    pub dims: usize,
    pub max_len: usize,
    pub pad_max: usize,
    pub n_source_per_class: usize,
    pub k_target_train: usize,
    pub n_target_test_per_class: usize,
    /// Strength of the fixed affine map applied to the target domain.
    pub domain_gap: f64,
    /// Standard deviation of the per-example target style offset.
    pub style_jitter: f64,
    /// Standard deviation of per-frame additive noise (both domains).
    pub noise_sigma: f64,
    /// Relative speed/phase perturbation of the per-example time warp.
    pub time_jitter: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            classes: 100,
            frames: 16,
            dims: 8,
            max_len: 28,
            pad_max: 4,
            n_source_per_class: 20,
            k_target_train: 1,
            n_target_test_per_class: 10,
            domain_gap: 2.0,
            style_jitter: 1.3,
            noise_sigma: 0.8,
            time_jitter: 0.3,
            seed: 0,
        }
    }
}

impl BenchConfig {
    /// Sequence lengths scaled up toward full-size clips (85 slots, pads of
    /// up to 20 frames).
    pub fn long_sequences() -> Self {
        Self {
            frames: 29,
            max_len: 85,
            pad_max: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.frames < 2 || self.dims == 0 {
            return bad("frames must be >= 2 and dims >= 1".into());
        }
        if self.max_len < self.frames {
            return bad(format!(
                "max_len {} shorter than frames {}",
                self.max_len, self.frames
            ));
        }
        if self.k_target_train < 1 || self.n_source_per_class < self.k_target_train {
            return bad(format!(
                "need n_source_per_class >= k_target_train >= 1, got {} / {}",
                self.n_source_per_class, self.k_target_train
            ));
        }
        if self.n_target_test_per_class == 0 {
            return bad("n_target_test_per_class must be >= 1".into());
        }
        for (name, v) in [
            ("domain_gap", self.domain_gap),
            ("style_jitter", self.style_jitter),
            ("noise_sigma", self.noise_sigma),
            ("time_jitter", self.time_jitter),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.time_jitter >= 0.5 {
            return bad("time_jitter must be < 0.5".into());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.max_len * self.dims
    }

    pub fn expected_count(&self) -> usize {
        self.classes * (self.n_source_per_class + self.k_target_train + self.n_target_test_per_class)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub classes: usize,
    pub frames: usize,
    pub dims: usize,
    pub max_len: usize,
    /// Generation config, when known (not persisted in the text format).
    pub config: Option<BenchConfig>,
    pub oracle: Option<OracleReport>,
}

impl Dataset {
    pub fn select(&self, domain: Domain, split: Split) -> Vec<&Example> {
        self.examples
            .iter()
            .filter(|e| e.domain == domain && e.split == split)
            .collect()
    }

    pub fn count(&self, domain: Domain, split: Split, label: usize) -> usize {
        self.examples
            .iter()
            .filter(|e| e.domain == domain && e.split == split && e.label == label)
            .count()
    }

    pub fn input_dim(&self) -> usize {
        self.max_len * self.dims
    }
}

/// Stacks examples into a `[n, max_len·dims]` matrix and their labels.
pub fn stack(examples: &[&Example]) -> Result<(Tensor, Vec<usize>)> {
    let first = examples.first().ok_or(Error::Empty("example batch"))?;
    let width = first.features.len();
    let mut data = Vec::with_capacity(examples.len() * width);
    let mut labels = Vec::with_capacity(examples.len());
    for e in examples {
        if e.features.len() != width {
            return Err(Error::ShapeMismatch {
                op: "stack",
                left: vec![width],
                right: vec![e.features.len()],
            });
        }
        data.extend_from_slice(&e.features);
        labels.push(e.label);
    }
    Ok((Tensor::matrix(examples.len(), width, data)?, labels))
}
