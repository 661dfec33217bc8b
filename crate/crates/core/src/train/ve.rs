//! Paired two-encoder training on `Δ_ve`.

use std::time::Instant;

use super::classify::{
    batch_from_items, mean_cross_entropy, stream, test_set, STREAM_AUGMENT, STREAM_INIT,
    STREAM_NOISE, STREAM_ORDER,
};
use super::report::EpochRecord;
use super::{
    materialize, pad_max, verify_gradient_stop, PairSampler, Regime, RoutingPolicy,
    TrainReport, TrainSettings,
};
use crate::autodiff::Tensor;
use crate::bench::Dataset;
use crate::error::{Error, Result};
use crate::model::EncoderChoice;
use crate::nn::Parameters;
use crate::optim::{cosine_lr, Adam};
use crate::ve::{LossBreakdown, VeModel};

fn check_routing(regime: Regime, routing: RoutingPolicy) -> Result<()> {
    let err = |detail: &str| {
        Err(Error::Regime {
            regime: regime.to_string(),
            detail: detail.into(),
        })
    };
    match regime {
        Regime::VeR if routing != RoutingPolicy::one_shot_only() => {
            err("both encoders must see only the one-shot real pool")
        }
        Regime::VeRS | Regime::VeRSMod | Regime::VeRSAug
            if !routing.source_pool.includes_synthetic()
                && !routing.target_pool.includes_synthetic() =>
        {
            err("routing gives neither encoder synthetic data")
        }
        Regime::VeR | Regime::VeRS | Regime::VeRSMod | Regime::VeRSAug => Ok(()),
        _ => err("not a two-encoder regime"),
    }
}

/// Trains `VeR`, `VeRS`, `VeRSMod` (bridging weight forced to 0) or
/// `VeRSAug` with the given pool routing.
pub fn train_ve(
    regime: Regime,
    data: &Dataset,
    routing: RoutingPolicy,
    settings: &TrainSettings,
) -> Result<(VeModel, TrainReport)> {
    check_routing(regime, routing)?;
    let start = Instant::now();
    let hyper = &settings.hyper;
    let mut ve_hyper = settings.ve.clone();
    if regime == Regime::VeRSMod {
        ve_hyper.gamma = 0.0;
    }
    let augment = regime.is_augmented().then_some(&settings.augment);
    let src_items = materialize(data, routing.source_pool, augment)?;
    let tgt_items = materialize(data, routing.target_pool, augment)?;
    let src_labels: Vec<usize> = src_items.iter().map(|i| i.example.label).collect();
    let tgt_labels: Vec<usize> = tgt_items.iter().map(|i| i.example.label).collect();
    let sampler = PairSampler::new(&src_labels, &tgt_labels, data.classes)?;

    let arch = settings.arch_for(data);
    let mut model = VeModel::init(&mut stream(hyper.seed, STREAM_INIT), &arch, ve_hyper)?;
    let mut order_rng = stream(hyper.seed, STREAM_ORDER);
    let mut noise_rng = stream(hyper.seed, STREAM_NOISE);
    let mut aug_rng = stream(hyper.seed, STREAM_AUGMENT);
    let pad = pad_max(data);
    let test = test_set(data)?;

    let mut report = TrainReport {
        regime: regime.to_string(),
        seed: hyper.seed,
        ..Default::default()
    };
    if routing.unstable() {
        report.warnings.push(
            "synthetic-only source pool: training through this routing is often unstable".into(),
        );
    }
    let pool = src_items.len().max(tgt_items.len());
    let per_epoch = pool.div_ceil(hyper.batch_size);
    let total = hyper.epochs * per_epoch;
    let mut opt = Adam::new(hyper.adam(), &model.tensors());
    let mask = model.decay_mask();
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        let lr0 = cosine_lr(step, total, hyper.lr_base, hyper.lr_min);
        let mut sum = LossBreakdown::default();
        for _ in 0..per_epoch {
            let pairs = sampler.sample(&mut order_rng, hyper.batch_size);
            let si: Vec<usize> = pairs.iter().map(|p| p.source).collect();
            let ti: Vec<usize> = pairs.iter().map(|p| p.target).collect();
            let (xs, ys) = batch_from_items(&src_items, &si, &mut aug_rng, pad)?;
            let (xt, yt) = batch_from_items(&tgt_items, &ti, &mut aug_rng, pad)?;
            let noise = model.draw_noise(&mut noise_rng, pairs.len());
            if settings.grad_stop_every > 0 && step % settings.grad_stop_every == 0 {
                verify_gradient_stop(&model, &xs, &xt, &noise[0])?;
                report.grad_stop_checks += 1;
            }
            let mut rec = model.loss_with_noise(&xs, &xt, &ys, &yt, &noise)?;
            if !rec.breakdown.delta_ve.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let grads: Vec<Tensor> = rec.gradients()?;
            let lr = cosine_lr(step, total, hyper.lr_base, hyper.lr_min);
            opt.step(model.tensors_mut(), &grads, &mask, lr)?;
            sum.accumulate(&rec.breakdown);
            step += 1;
        }
        let (ls, lt) = match &test {
            Some((x, y)) => (
                Some(mean_cross_entropy(&model.infer(x, EncoderChoice::Source)?, y)?),
                Some(mean_cross_entropy(&model.infer(x, EncoderChoice::Target)?, y)?),
            ),
            None => (None, None),
        };
        report.epochs.push(EpochRecord {
            epoch,
            lr: lr0,
            train: sum.scaled(1.0 / per_epoch as f64),
            test_loss_source: ls,
            test_loss_target: lt,
        });
    }
    report.steps = step;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}
