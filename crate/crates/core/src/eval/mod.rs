//! Metrics, embedding projections and experiment grids.

mod grid;
mod pca;
mod plot;

pub use grid::{
    run_experiment_grid, summarize, GridConfig, GridOutcome, GridRun, MetricsRow, RunManifest,
    SummaryRow,
};
pub use pca::{pca_project, write_projection, Projection};
pub use plot::scatter_svg;

use crate::autodiff::Tensor;
use crate::bench::{stack, Dataset, Domain, Split};
use crate::error::{Error, Result};
use crate::model::{EncoderChoice, Model};

/// Percentage of rows whose label ranks within the top `k` logits. Ties
/// rank the lower class index first.
pub fn topk_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    if logits.ndim() != 2 {
        return Err(Error::InvalidTensor(format!(
            "logits must be [batch, classes], got {:?}",
            logits.shape()
        )));
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if n != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "topk_accuracy",
            left: vec![n],
            right: vec![labels.len()],
        });
    }
    if n == 0 {
        return Err(Error::Empty("evaluation batch"));
    }
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let mut hits = 0;
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let target = row[y];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > target || (v == target && j < y))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / n as f64)
}

/// Top-1 and top-5 accuracy and mean cross-entropy on the target test split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub top1: f64,
    pub top5: f64,
    pub test_loss: f64,
}

pub fn evaluate(model: &Model, data: &Dataset, choice: EncoderChoice) -> Result<Evaluation> {
    let test = data.select(Domain::Target, Split::Test);
    if test.is_empty() {
        return Err(Error::Empty("target test split"));
    }
    let (x, y) = stack(&test)?;
    let logits = model.infer(&x, choice)?;
    Ok(Evaluation {
        top1: topk_accuracy(&logits, &y, 1)?,
        top5: topk_accuracy(&logits, &y, 5.min(data.classes))?,
        test_loss: crate::train::mean_cross_entropy(&logits, &y)?,
    })
}
