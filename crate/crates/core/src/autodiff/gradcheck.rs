//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use super::tensor::Tensor;
use crate::exec::Exec;

/// Central-difference estimate of the gradient of `f` at `params`, one
/// coordinate at a time: `(f(p + eps) - f(p - eps)) / (2 eps)`.
pub fn finite_difference_grad<F>(f: F, params: &[Tensor], eps: f64) -> Vec<Tensor>
where
    F: Fn(&[Tensor]) -> f64 + Sync + Send,
{
    finite_difference_grad_with(Exec::Sequential, f, params, eps)
}

/// As [`finite_difference_grad`], fanning coordinates out over `exec`.
pub fn finite_difference_grad_with<F>(
    exec: Exec,
    f: F,
    params: &[Tensor],
    eps: f64,
) -> Vec<Tensor>
where
    F: Fn(&[Tensor]) -> f64 + Sync + Send,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.numel()).map(move |i| (p, i)))
        .collect();
    let partials = exec.map(&coords, |&(p, i)| {
        let mut probe = params.to_vec();
        let orig = probe[p].data()[i];
        probe[p].data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe[p].data_mut()[i] = orig - eps;
        let down = f(&probe);
        (up - down) / (2.0 * eps)
    });
    let mut out: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
    for (&(p, i), d) in coords.iter().zip(partials) {
        out[p].data_mut()[i] = d;
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over all tensors jointly; 0 when both vanish.
pub fn relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (a, b) in analytic.iter().zip(numeric) {
        for (x, y) in a.data().iter().zip(b.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}
