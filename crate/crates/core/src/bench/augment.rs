//! Label-preserving temporal augmentations applied to one-shot examples.

use rand::Rng;

use super::Example;
use crate::error::{Error, Result};

/// Plays the content frames `factor` times faster: linear resampling to
/// `round(content_len / factor)` frames with the first and last frames kept
/// in place.
pub fn speed_augment(ex: &Example, factor: f64) -> Result<Example> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Config(format!("speed factor must be > 0, got {factor}")));
    }
    let n_in = ex.content_len;
    let n_out = (n_in as f64 / factor).round() as usize;
    if n_out == 0 || n_in == 0 {
        return Err(Error::Empty("resampled content"));
    }
    let max_len = ex.max_len();
    if n_out > max_len {
        return Err(Error::Config(format!(
            "speed factor {factor} stretches {n_in} frames to {n_out}, beyond max_len {max_len}"
        )));
    }
    let d = ex.dims;
    let mut features = vec![0.0; ex.features.len()];
    let step = if n_out > 1 {
        (n_in - 1) as f64 / (n_out - 1) as f64
    } else {
        0.0
    };
    for j in 0..n_out {
        let t = (j as f64 * step).min((n_in - 1) as f64);
        let lo = t.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        let w = t - lo as f64;
        for k in 0..d {
            features[j * d + k] = (1.0 - w) * ex.features[lo * d + k] + w * ex.features[hi * d + k];
        }
    }
    Ok(Example {
        features,
        content_len: n_out,
        ..ex.clone()
    })
}

/// Number of empty frames inserted before and after the content.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadInfo {
    pub head: usize,
    pub tail: usize,
}

/// Surrounds the content with `U{0..=pad_max}` zero frames on each side,
/// zero-filling the remainder up to `max_len`. The padded clip becomes the
/// new content.
pub fn temporal_pad_augment<R: Rng>(
    ex: &Example,
    rng: &mut R,
    max_len: usize,
    pad_max: usize,
) -> Result<(Example, PadInfo)> {
    if ex.content_len + 2 * pad_max > max_len {
        return Err(Error::Config(format!(
            "content {} + 2·pad_max {} exceeds max_len {}",
            ex.content_len, pad_max, max_len
        )));
    }
    let head = rng.random_range(0..=pad_max);
    let tail = rng.random_range(0..=pad_max);
    let d = ex.dims;
    let mut features = vec![0.0; max_len * d];
    features[head * d..(head + ex.content_len) * d].copy_from_slice(ex.content());
    Ok((
        Example {
            features,
            content_len: head + ex.content_len + tail,
            ..ex.clone()
        },
        PadInfo { head, tail },
    ))
}
