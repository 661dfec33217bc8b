//! Per-epoch training history.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ve::LossBreakdown;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    /// Mean training loss over the epoch. Classification regimes fill
    /// `delta_entropy` and `delta_ve` with the cross-entropy.
    pub train: LossBreakdown,
    /// Target-domain test cross-entropy through the source path.
    pub test_loss_source: Option<f64>,
    /// Same through the target path (`μ_tgt`); VE models only.
    pub test_loss_target: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: String,
    pub seed: u64,
    pub steps: usize,
    pub wall_time_s: f64,
    pub epochs: Vec<EpochRecord>,
    /// Number of in-training gradient-stop checks that passed.
    pub grad_stop_checks: usize,
    pub warnings: Vec<String>,
    /// Where the final model was saved, if it was.
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str =
        "epoch,lr,delta_ve,delta_entropy,delta_dist,l1,kl,test_loss_source,test_loss_target";

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train.delta_ve)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6e}"));
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let t = &e.train;
            writeln!(
                out,
                "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{}",
                e.epoch,
                e.lr,
                t.delta_ve,
                t.delta_entropy,
                t.delta_dist,
                t.l1_term,
                t.kl_term,
                opt(e.test_loss_source),
                opt(e.test_loss_target)
            )
            .expect("string write");
        }
        out
    }
}
