use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BenchConfig, Dataset, Domain, Example, Split};
use crate::error::Result;
use crate::exec::Exec;

/// Stream-splitting seed derivation (splitmix64 finalizer over both inputs).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const DOMAIN_STREAM: u64 = u64::MAX;
const HELDOUT_STREAM: u64 = u64::MAX - 1;

/// Nearest-centroid accuracy measured at generation time: centroids from
/// source train examples, evaluated on held-out source draws (not stored)
/// and on the target test split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub source_accuracy: f64,
    pub target_accuracy: f64,
}

impl OracleReport {
    pub fn gap(&self) -> f64 {
        self.source_accuracy - self.target_accuracy
    }
}

/// Fixed per-frame affine map `f ↦ M f + b` rendering the target domain.
struct DomainMap {
    matrix: Vec<f64>,
    offset: Vec<f64>,
    dims: usize,
}

impl DomainMap {
    fn sample(rng: &mut ChaCha8Rng, dims: usize, gap: f64) -> Self {
        let scale = gap / (dims as f64).sqrt();
        let mut matrix = vec![0.0; dims * dims];
        for r in 0..dims {
            for c in 0..dims {
                let n: f64 = rng.sample(StandardNormal);
                matrix[r * dims + c] = if r == c { 1.0 } else { 0.0 } + scale * n;
            }
        }
        let offset = (0..dims)
            .map(|_| gap * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            matrix,
            offset,
            dims,
        }
    }

    fn apply(&self, frame: &[f64], out: &mut [f64]) {
        let d = self.dims;
        for r in 0..d {
            let row = &self.matrix[r * d..(r + 1) * d];
            out[r] = self.offset[r] + row.iter().zip(frame).map(|(m, f)| m * f).sum::<f64>();
        }
    }
}

/// Smooth random walk with momentum, centered per dimension and scaled to
/// unit RMS.
fn prototype(rng: &mut ChaCha8Rng, frames: usize, dims: usize) -> Vec<f64> {
    let mut p = vec![0.0; frames * dims];
    for d in 0..dims {
        let mut pos: f64 = rng.sample(StandardNormal);
        let mut vel = 0.0;
        for t in 0..frames {
            vel = 0.7 * vel + 0.5 * rng.sample::<f64, _>(StandardNormal);
            pos += vel;
            p[t * dims + d] = pos;
        }
        let mean = (0..frames).map(|t| p[t * dims + d]).sum::<f64>() / frames as f64;
        for t in 0..frames {
            p[t * dims + d] -= mean;
        }
    }
    let rms = (p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64).sqrt();
    if rms > 0.0 {
        p.iter_mut().for_each(|v| *v /= rms);
    }
    p
}

/// Resamples `frames` frames of `src` at `t_j = c + speed·(j − c) + shift`
/// (c the center frame), clamped to the clip, with linear interpolation.
fn warp(src: &[f64], frames: usize, dims: usize, speed: f64, shift: f64) -> Vec<f64> {
    let mut out = vec![0.0; frames * dims];
    let center = (frames - 1) as f64 / 2.0;
    let last = (frames - 1) as f64;
    for j in 0..frames {
        let t = (center + speed * (j as f64 - center) + shift).clamp(0.0, last);
        let lo = t.floor() as usize;
        let hi = (lo + 1).min(frames - 1);
        let w = t - lo as f64;
        for d in 0..dims {
            out[j * dims + d] = (1.0 - w) * src[lo * dims + d] + w * src[hi * dims + d];
        }
    }
    out
}

struct Renderer<'a> {
    cfg: &'a BenchConfig,
    map: &'a DomainMap,
}

impl Renderer<'_> {
    fn render(
        &self,
        rng: &mut ChaCha8Rng,
        proto: &[f64],
        label: usize,
        domain: Domain,
        split: Split,
    ) -> Example {
        let cfg = self.cfg;
        let (frames, dims) = (cfg.frames, cfg.dims);
        let speed = 1.0 + cfg.time_jitter * rng.random_range(-1.0..=1.0);
        let shift = cfg.time_jitter * frames as f64 / 2.0 * rng.random_range(-1.0..=1.0);
        let warped = warp(proto, frames, dims, speed, shift);
        let mut features = vec![0.0; cfg.max_len * dims];
        match domain {
            Domain::Source => features[..frames * dims].copy_from_slice(&warped),
            Domain::Target => {
                let style: Vec<f64> = (0..dims)
                    .map(|_| cfg.style_jitter * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                for t in 0..frames {
                    let out = &mut features[t * dims..(t + 1) * dims];
                    self.map.apply(&warped[t * dims..(t + 1) * dims], out);
                    out.iter_mut().zip(&style).for_each(|(o, s)| *o += s);
                }
            }
        }
        if cfg.noise_sigma > 0.0 {
            for v in &mut features[..frames * dims] {
                *v += cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Example {
            features,
            content_len: frames,
            dims,
            label,
            domain,
            split,
        }
    }
}

pub fn gen_benchmark(cfg: &BenchConfig) -> Result<Dataset> {
    gen_benchmark_with(Exec::default(), cfg)
}

/// Pure function of `cfg`; classes are generated independently from
/// per-class derived seeds, so `exec` does not affect the output.
pub fn gen_benchmark_with(exec: Exec, cfg: &BenchConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut map_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, DOMAIN_STREAM));
    let map = DomainMap::sample(&mut map_rng, cfg.dims, cfg.domain_gap);
    let renderer = Renderer { cfg, map: &map };

    let per_class = exec.map_range(cfg.classes, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, c as u64));
        let proto = prototype(&mut rng, cfg.frames, cfg.dims);
        let mut out = Vec::with_capacity(
            cfg.n_source_per_class + cfg.k_target_train + cfg.n_target_test_per_class,
        );
        for _ in 0..cfg.n_source_per_class {
            out.push(renderer.render(&mut rng, &proto, c, Domain::Source, Split::Train));
        }
        for _ in 0..cfg.k_target_train {
            out.push(renderer.render(&mut rng, &proto, c, Domain::Target, Split::Train));
        }
        for _ in 0..cfg.n_target_test_per_class {
            out.push(renderer.render(&mut rng, &proto, c, Domain::Target, Split::Test));
        }
        let mut held_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ HELDOUT_STREAM, c as u64));
        let heldout: Vec<Example> = (0..cfg.n_target_test_per_class)
            .map(|_| renderer.render(&mut held_rng, &proto, c, Domain::Source, Split::Test))
            .collect();
        (out, heldout)
    });

    let mut examples = Vec::with_capacity(cfg.expected_count());
    let mut heldout = Vec::new();
    for (ex, held) in per_class {
        examples.extend(ex);
        heldout.extend(held);
    }
    let mut ds = Dataset {
        examples,
        classes: cfg.classes,
        frames: cfg.frames,
        dims: cfg.dims,
        max_len: cfg.max_len,
        config: Some(cfg.clone()),
        oracle: None,
    };
    let source_train = ds.select(Domain::Source, Split::Train);
    let target_test = ds.select(Domain::Target, Split::Test);
    let held_refs: Vec<&Example> = heldout.iter().collect();
    let source_accuracy = nearest_centroid_oracle(&source_train, &held_refs, cfg.classes);
    let target_accuracy = nearest_centroid_oracle(&source_train, &target_test, cfg.classes);
    ds.oracle = Some(OracleReport {
        source_accuracy,
        target_accuracy,
    });
    Ok(ds)
}

/// Fraction of `eval` examples whose nearest class centroid (Euclidean,
/// centroids from `fit`) carries their label.
pub fn nearest_centroid_oracle(fit: &[&Example], eval: &[&Example], classes: usize) -> f64 {
    if eval.is_empty() || fit.is_empty() {
        return 0.0;
    }
    let width = fit[0].features.len();
    let mut centroids = vec![vec![0.0; width]; classes];
    let mut counts = vec![0usize; classes];
    for e in fit {
        counts[e.label] += 1;
        for (c, v) in centroids[e.label].iter_mut().zip(&e.features) {
            *c += v;
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        if *n > 0 {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
    }
    let correct = eval
        .iter()
        .filter(|e| {
            let mut best = (f64::INFINITY, 0);
            for (k, c) in centroids.iter().enumerate() {
                if counts[k] == 0 {
                    continue;
                }
                let d: f64 = c.iter().zip(&e.features).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1 == e.label
        })
        .count();
    correct as f64 / eval.len() as f64
}
