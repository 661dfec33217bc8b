//! Self-training baseline: confident predictions on unlabeled clips become
//! extra labels for the next round.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::classify::{fit_classifier, stream, test_set, STREAM_AUGMENT, STREAM_INIT, STREAM_ORDER};
use super::{pad_max, PoolItem, TrainReport, TrainSettings};
use crate::bench::{stack, Dataset, Example};
use crate::error::{Error, Result};
use crate::model::ClassifierModel;
use crate::nn::softmax_rows;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoSettings {
    pub rounds: usize,
    /// Minimum softmax confidence for adopting a prediction.
    pub threshold: f64,
    /// Threshold decrease after a round that adopts nothing.
    pub anneal: f64,
}

impl Default for PseudoSettings {
    fn default() -> Self {
        Self {
            rounds: 5,
            threshold: 0.8,
            anneal: 0.1,
        }
    }
}

impl PseudoSettings {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("pseudo rounds must be >= 1".into()));
        }
        if !self.threshold.is_finite() || !(self.anneal >= 0.0) {
            return Err(Error::Config("pseudo threshold/anneal must be finite, anneal >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PseudoWarning {
    /// No prediction reached the threshold; it was lowered to `next`.
    EmptyAdoption { round: usize, threshold: f64, next: f64 },
}

#[derive(Clone, Debug)]
pub struct PseudoOutcome {
    pub model: ClassifierModel,
    pub report: TrainReport,
    /// Final pseudo-label per unlabeled example, `None` if never adopted.
    pub labels: Vec<Option<usize>>,
    /// True when a round reproduced the previous round's labels.
    pub converged: bool,
    pub rounds_run: usize,
    /// Round in which the final labels were first produced.
    pub settled_round: Option<usize>,
    pub warnings: Vec<PseudoWarning>,
}

fn predict(model: &ClassifierModel, unlabeled: &[&Example], threshold: f64) -> Result<Vec<Option<usize>>> {
    let (x, _) = stack(unlabeled)?;
    let probs = softmax_rows(&model.logits(&x)?);
    let c = probs.shape()[1];
    Ok(probs
        .data()
        .chunks(c)
        .map(|row| {
            let (arg, &p) = row
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
            (p >= threshold).then_some(arg)
        })
        .collect())
}

/// Trains on `labeled`, then for up to `rounds` rounds labels the confident
/// part of `unlabeled` and trains further on the union. Labels carried by
/// `unlabeled` are ignored.
pub fn pseudo_label_loop(
    labeled: &[&Example],
    unlabeled: &[&Example],
    data: &Dataset,
    settings: &TrainSettings,
) -> Result<PseudoOutcome> {
    settings.pseudo.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabeled pool"));
    }
    let start = Instant::now();
    let hyper = &settings.hyper;
    let mut model = ClassifierModel::init(&mut stream(hyper.seed, STREAM_INIT), &settings.arch_for(data))?;
    let mut order_rng = stream(hyper.seed, STREAM_ORDER);
    let mut aug_rng = stream(hyper.seed, STREAM_AUGMENT);
    let pad = pad_max(data);
    let test = test_set(data)?;
    let mut report = TrainReport {
        regime: "PseudoLabel".into(),
        seed: hyper.seed,
        ..Default::default()
    };
    let base: Vec<PoolItem> = labeled
        .iter()
        .map(|e| PoolItem {
            example: (*e).clone(),
            pad: false,
        })
        .collect();
    fit_classifier(&mut model, &base, hyper, (&mut order_rng, &mut aug_rng), pad, test.as_ref(), &mut report)?;

    let mut labels: Vec<Option<usize>> = vec![None; unlabeled.len()];
    let mut threshold = settings.pseudo.threshold;
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut settled_round = None;
    let mut rounds_run = 0;
    for round in 1..=settings.pseudo.rounds {
        rounds_run = round;
        let next = predict(&model, unlabeled, threshold)?;
        if next.iter().all(Option::is_none) {
            let lowered = threshold - settings.pseudo.anneal;
            warnings.push(PseudoWarning::EmptyAdoption {
                round,
                threshold,
                next: lowered,
            });
            report
                .warnings
                .push(format!("round {round}: nothing adopted at threshold {threshold:.3}"));
            threshold = lowered;
            continue;
        }
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
        settled_round = Some(round);
        let mut items = base.clone();
        items.extend(unlabeled.iter().zip(&labels).filter_map(|(e, y)| {
            y.map(|label| PoolItem {
                example: Example { label, ..(*e).clone() },
                pad: false,
            })
        }));
        fit_classifier(&mut model, &items, hyper, (&mut order_rng, &mut aug_rng), pad, test.as_ref(), &mut report)?;
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(PseudoOutcome {
        model,
        report,
        labels,
        converged,
        rounds_run,
        settled_round,
        warnings,
    })
}
