//! Checks that the L1 bridging term leaves the target branch untouched.

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::ve::{gaussian_head, l1_mean, reparameterize, VeModel};

/// How the target sample enters the L1 term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Barrier {
    Detach,
    /// Mutation used to show the check can fail.
    #[doc(hidden)]
    Removed,
}

/// Largest absolute `∂L1/∂θ` over each target-branch parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStopReport {
    pub per_param: Vec<(String, f64)>,
}

impl GradStopReport {
    pub fn max_abs(&self) -> f64 {
        self.per_param.iter().map(|(_, v)| *v).fold(0.0, f64::max)
    }
}

/// Computes `∂ mean|e_src − z_tgt| / ∂θ_tgt` for one batch and errors with
/// [`Error::GradientLeak`] unless it is exactly zero.
pub fn verify_gradient_stop(
    model: &VeModel,
    x_src: &Tensor,
    x_tgt: &Tensor,
    noise: &Tensor,
) -> Result<GradStopReport> {
    verify_gradient_stop_with(model, x_src, x_tgt, noise, Barrier::Detach)
}

pub fn verify_gradient_stop_with(
    model: &VeModel,
    x_src: &Tensor,
    x_tgt: &Tensor,
    noise: &Tensor,
    barrier: Barrier,
) -> Result<GradStopReport> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xs = g.constant(x_src.clone());
    let xt = g.constant(x_tgt.clone());
    let e_src = bound.encoder_source.forward(&mut g, xs)?;
    let e_tgt = bound.encoder_target.forward(&mut g, xt)?;
    let p_tgt = gaussian_head(&mut g, e_tgt, &bound.head_target)?;
    let z = reparameterize(&mut g, &p_tgt, noise)?;
    let z = match barrier {
        Barrier::Detach => g.detach(z),
        Barrier::Removed => z,
    };
    let l1 = l1_mean(&mut g, e_src, z)?;
    g.backward(l1)?;

    let names = model.param_names();
    let n_src = model.encoder_source.tensors().len() + model.head_source.tensors().len();
    let report = GradStopReport {
        per_param: bound
            .target_vars()
            .iter()
            .zip(&names[n_src..])
            .map(|(&v, name)| (name.clone(), g.grad_or_zeros(v).max_abs()))
            .collect(),
    };
    if let Some((param, max_abs)) = report.per_param.iter().find(|(_, v)| *v != 0.0) {
        return Err(Error::GradientLeak {
            param: param.clone(),
            max_abs: *max_abs,
        });
    }
    Ok(report)
}
