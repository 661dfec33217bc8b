use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("invalid axis {axis} for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("label mismatch within pair: source {source_label} vs target {target_label}")]
    LabelMismatch {
        source_label: usize,
        target_label: usize,
    },
    #[error("sampled target embedding must be a detached node")]
    NotDetached,
    #[error("non-finite gradient in parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("class {class} missing from {pool} pool")]
    MissingClass { class: usize, pool: &'static str },
    #[error("regime {regime}: {detail}")]
    Regime { regime: String, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("checkpoint error at byte {offset}: {detail}")]
    Checkpoint { offset: usize, detail: String },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("data has zero variance; no principal direction exists")]
    RankZero,
    #[error("gradient leak into {param}: max |grad| = {max_abs:e}")]
    GradientLeak { param: String, max_abs: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
