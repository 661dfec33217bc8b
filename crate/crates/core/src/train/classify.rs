//! Single-encoder cross-entropy training.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{draw_features, materialize, pad_max, PoolItem, PoolKind, Regime, TrainReport, TrainSettings};
use super::report::EpochRecord;
use crate::autodiff::{Graph, Tensor};
use crate::bench::{derive_seed, stack, Dataset, Domain, Split};
use crate::error::{Error, Result};
use crate::model::ClassifierModel;
use crate::nn::{cross_entropy, Parameters};
use crate::optim::{cosine_lr, Adam, TrainHyper};
use crate::ve::LossBreakdown;

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_ORDER: u64 = 2;
pub(crate) const STREAM_NOISE: u64 = 3;
pub(crate) const STREAM_AUGMENT: u64 = 4;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, id))
}

/// Target-domain test inputs and labels, if the dataset has any.
pub(crate) fn test_set(data: &Dataset) -> Result<Option<(Tensor, Vec<usize>)>> {
    let test = data.select(Domain::Target, Split::Test);
    if test.is_empty() {
        return Ok(None);
    }
    stack(&test).map(Some)
}

pub(crate) fn mean_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let ce = cross_entropy(&mut g, l, labels)?;
    Ok(g.value(ce).item())
}

pub(crate) fn batch_from_items(
    items: &[PoolItem],
    idx: &[usize],
    aug_rng: &mut ChaCha8Rng,
    pad_max: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let width = items[idx[0]].example.features.len();
    let mut data = Vec::with_capacity(idx.len() * width);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend(draw_features(&items[i], aug_rng, pad_max)?);
        labels.push(items[i].example.label);
    }
    Ok((Tensor::matrix(idx.len(), width, data)?, labels))
}

/// Minibatch Adam over shuffled epochs of `items`, appending one record per
/// epoch to `report`.
pub(crate) fn fit_classifier(
    model: &mut ClassifierModel,
    items: &[PoolItem],
    hyper: &TrainHyper,
    streams: (&mut ChaCha8Rng, &mut ChaCha8Rng),
    pad_max: usize,
    test: Option<&(Tensor, Vec<usize>)>,
    report: &mut TrainReport,
) -> Result<()> {
    if items.is_empty() {
        return Err(Error::Empty("training pool"));
    }
    let (order_rng, aug_rng) = streams;
    let per_epoch = items.len().div_ceil(hyper.batch_size);
    let total = hyper.epochs * per_epoch;
    let mut opt = Adam::new(hyper.adam(), &model.tensors());
    let mask = model.decay_mask();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let epoch_offset = report.epochs.len();
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        order.shuffle(order_rng);
        let lr0 = cosine_lr(step, total, hyper.lr_base, hyper.lr_min);
        let mut sum = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let (x, y) = batch_from_items(items, chunk, aug_rng, pad_max)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let xv = g.constant(x);
            let (_, logits) = bound.forward(&mut g, xv)?;
            let loss = cross_entropy(&mut g, logits, &y)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            g.backward(loss)?;
            let grads: Vec<Tensor> = bound.vars().iter().map(|&v| g.grad_or_zeros(v)).collect();
            let lr = cosine_lr(step, total, hyper.lr_base, hyper.lr_min);
            opt.step(model.tensors_mut(), &grads, &mask, lr)?;
            sum += value;
            step += 1;
        }
        let mean = sum / per_epoch as f64;
        let test_loss = match test {
            Some((x, y)) => Some(mean_cross_entropy(&model.logits(x)?, y)?),
            None => None,
        };
        report.epochs.push(EpochRecord {
            epoch: epoch_offset + epoch,
            lr: lr0,
            train: LossBreakdown {
                delta_entropy: mean,
                delta_ve: mean,
                ..Default::default()
            },
            test_loss_source: test_loss,
            test_loss_target: None,
        });
    }
    report.steps += step;
    Ok(())
}

/// Trains `ClR`, `ClRS` or `ClRSAug`.
pub fn train_classification(
    regime: Regime,
    data: &Dataset,
    settings: &TrainSettings,
) -> Result<(ClassifierModel, TrainReport)> {
    let (kind, augment) = match regime {
        Regime::ClR => (PoolKind::OneShotReal, None),
        Regime::ClRS => (PoolKind::RealSynthetic, None),
        Regime::ClRSAug => (PoolKind::RealSynthetic, Some(&settings.augment)),
        other => {
            return Err(Error::Regime {
                regime: other.to_string(),
                detail: "not a single-encoder regime".into(),
            })
        }
    };
    let start = Instant::now();
    let hyper = &settings.hyper;
    let items = materialize(data, kind, augment)?;
    let arch = settings.arch_for(data);
    let mut model = ClassifierModel::init(&mut stream(hyper.seed, STREAM_INIT), &arch)?;
    let test = test_set(data)?;
    let mut report = TrainReport {
        regime: regime.to_string(),
        seed: hyper.seed,
        ..Default::default()
    };
    fit_classifier(
        &mut model,
        &items,
        hyper,
        (
            &mut stream(hyper.seed, STREAM_ORDER),
            &mut stream(hyper.seed, STREAM_AUGMENT),
        ),
        pad_max(data),
        test.as_ref(),
        &mut report,
    )?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}
