//! Quick self-tests behind the `check` subcommand: gradients against finite
//! differences, KL identities, the gradient stop, augmentation identity and
//! PCA orthonormality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{finite_difference_grad, relative_error, Graph, Tensor};
use crate::bench::{gen_benchmark, speed_augment, BenchConfig, Domain, Split};
use crate::error::{Error, Result};
use crate::eval::pca_project;
use crate::exec::Exec;
use crate::model::{ArchConfig, ClassifierModel};
use crate::nn::{cross_entropy, Parameters};
use crate::optim::TrainHyper;
use crate::train::{verify_gradient_stop_with, Barrier, Regime, TrainSettings};
use crate::ve::{kl_diag_gaussian, DiagonalGaussian, VeHyper, VeModel};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, r: Result<String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn fail(detail: String) -> Error {
    Error::Config(detail)
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

fn with_tensors<M: Parameters + Clone>(m: &M, ts: &[Tensor]) -> M {
    let mut m = m.clone();
    for (dst, src) in m.tensors_mut().into_iter().zip(ts) {
        *dst = src.clone();
    }
    m
}

fn arch() -> ArchConfig {
    ArchConfig {
        input_dim: 6,
        hidden_dims: vec![5],
        embed_dim: 4,
        classes: 4,
    }
}

/// Worst relative error over one classifier and one full VE loss instance.
fn gradient_instance(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = rand_matrix(&mut rng, 3, 6);
    let xt = rand_matrix(&mut rng, 3, 6);
    let y: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();

    let clf = ClassifierModel::init(&mut rng, &arch())?;
    let ce = |m: &ClassifierModel| -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let x = g.constant(xs.clone());
        let (_, logits) = b.forward(&mut g, x)?;
        let loss = cross_entropy(&mut g, logits, &y)?;
        g.backward(loss)?;
        Ok((g.value(loss).item(), b.vars().iter().map(|&v| g.grad_or_zeros(v)).collect()))
    };
    let (_, analytic) = ce(&clf)?;
    let params: Vec<Tensor> = clf.tensors().into_iter().cloned().collect();
    let numeric = finite_difference_grad(|p| ce(&with_tensors(&clf, p)).expect("valid").0, &params, 1e-5);
    let e_clf = relative_error(&analytic, &numeric);

    let hyper = VeHyper {
        beta: 0.3,
        gamma: 0.7,
        ..VeHyper::default()
    };
    let ve = VeModel::init(&mut rng, &arch(), hyper)?;
    let noise = ve.draw_noise(&mut rng, 3);
    let mut step = ve.loss_with_noise(&xs, &xt, &y, &y, &noise)?;
    let analytic = step.gradients()?;
    let held = step.samples.clone();
    let params: Vec<Tensor> = ve.tensors().into_iter().cloned().collect();
    let numeric = finite_difference_grad(
        |p| {
            with_tensors(&ve, p)
                .loss_holding_samples(&xs, &xt, &y, &y, &noise, &held)
                .expect("valid")
                .breakdown
                .delta_ve
        },
        &params,
        1e-5,
    );
    Ok(e_clf.max(relative_error(&analytic, &numeric)))
}

pub fn check_gradients(exec: Exec, instances: u64) -> CheckResult {
    let seeds: Vec<u64> = (0..instances).collect();
    let r = exec
        .map(&seeds, |&s| gradient_instance(s))
        .into_iter()
        .collect::<Result<Vec<f64>>>()
        .and_then(|errs| {
            let worst = errs.iter().cloned().fold(0.0, f64::max);
            if worst < 1e-4 {
                Ok(format!("{instances} instances, worst relative error {worst:.2e}"))
            } else {
                Err(fail(format!("worst relative error {worst:.2e} ≥ 1e-4")))
            }
        });
    outcome("gradients", r)
}

fn kl_value(mu_p: &[f64], ls_p: &[f64], mu_q: &[f64], ls_q: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let mut dist = |mu: &[f64], ls: &[f64]| DiagonalGaussian {
        mu: g.constant(Tensor::vector(mu.to_vec())),
        log_sigma: g.constant(Tensor::vector(ls.to_vec())),
    };
    let p = dist(mu_p, ls_p);
    let q = dist(mu_q, ls_q);
    let kl = kl_diag_gaussian(&mut g, &p, &q)?;
    Ok(g.value(kl).item())
}

pub fn check_kl() -> CheckResult {
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst_self: f64 = 0.0;
        let mut min_kl = f64::INFINITY;
        for _ in 0..1000 {
            let v: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
            worst_self = worst_self.max(kl_value(&v[0..3], &v[3..6], &v[0..3], &v[3..6])?.abs());
            min_kl = min_kl.min(kl_value(&v[0..3], &v[3..6], &v[6..9], &v[9..12])?);
        }
        let shift = kl_value(&[1.0; 3], &[0.0; 3], &[0.0; 3], &[0.0; 3])?;
        if worst_self > 1e-12 || min_kl < 0.0 || (shift - 1.5).abs() > 1e-6 {
            return Err(fail(format!("self {worst_self:e}, min {min_kl:e}, unit shift {shift}")));
        }
        Ok(format!("self-KL ≤ {worst_self:.1e}, min over 1000 pairs {min_kl:.3e}"))
    })();
    outcome("kl", r)
}

/// Trains a small VeRS model with the verifier active on every step, then
/// confirms the verifier catches a removed barrier.
pub fn check_gradient_stop() -> CheckResult {
    let r = (|| {
        let data = gen_benchmark(&BenchConfig {
            classes: 4,
            n_source_per_class: 4,
            n_target_test_per_class: 2,
            ..BenchConfig::default()
        })?;
        let settings = TrainSettings {
            hyper: TrainHyper {
                epochs: 2,
                ..TrainHyper::default()
            },
            hidden_dims: vec![8],
            embed_dim: 4,
            grad_stop_every: 1,
            ..TrainSettings::default()
        };
        let out = crate::train::train_regime(Regime::VeRS, &data, &settings)?;
        let checks = out.report.grad_stop_checks;
        let crate::model::Model::Ve(model) = out.model else {
            return Err(fail("VeRS did not produce a VE model".into()));
        };
        let test = data.select(Domain::Target, Split::Test);
        let (x, _) = crate::bench::stack(&test)?;
        let noise = model.draw_noise(&mut ChaCha8Rng::seed_from_u64(0), x.shape()[0]);
        match verify_gradient_stop_with(&model, &x, &x, &noise[0], Barrier::Removed) {
            Err(Error::GradientLeak { .. }) => Ok(format!("{checks} in-training checks, mutation detected")),
            _ => Err(fail("removing the barrier went unnoticed".into())),
        }
    })();
    outcome("gradient-stop", r)
}

pub fn check_augmentation() -> CheckResult {
    let r = (|| {
        let data = gen_benchmark(&BenchConfig {
            classes: 2,
            n_source_per_class: 2,
            n_target_test_per_class: 1,
            ..BenchConfig::default()
        })?;
        for ex in &data.examples {
            if speed_augment(ex, 1.0)? != *ex {
                return Err(fail("speed factor 1.0 changed an example".into()));
            }
        }
        Ok(format!("{} examples unchanged at factor 1.0", data.examples.len()))
    })();
    outcome("augmentation", r)
}

pub fn check_pca() -> CheckResult {
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..60 * 6).map(|_| rng.sample(StandardNormal)).collect();
        let t = Tensor::matrix(60, 6, data)?;
        let p = pca_project(&t, &[0; 60], 2, 0)?;
        let c = &p.components;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let err = (dot(&c[0], &c[0]) - 1.0)
            .abs()
            .max((dot(&c[1], &c[1]) - 1.0).abs())
            .max(dot(&c[0], &c[1]).abs());
        if err > 1e-10 || p.explained_variance[0] < p.explained_variance[1] {
            return Err(fail(format!("orthonormality error {err:e}")));
        }
        Ok(format!("orthonormality error {err:.1e}"))
    })();
    outcome("pca", r)
}

pub fn run_all(exec: Exec, gradient_instances: u64) -> Vec<CheckResult> {
    vec![
        check_gradients(exec, gradient_instances),
        check_kl(),
        check_gradient_stop(),
        check_augmentation(),
        check_pca(),
    ]
}
