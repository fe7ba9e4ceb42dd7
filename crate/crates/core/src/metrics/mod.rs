//! Agreement statistics between annotators and patch-level classification
//! metrics.
//!
//! Intervals are 95% normal approximations clamped to each metric's range.

mod classification;
mod kappa;
mod report;
mod roc;
mod ttest;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classification::{macro_average, precision_recall_f1, ClassMetrics, MacroMetrics};
pub use kappa::{
    average_kappa, cohen_kappa, kappa_predom, kappa_standard_error, kappa_with_ci, per_class_kappa,
    predominant_agreement, predominant_matches, robust_agreement, robust_matches, KappaStats, LabeledSeries,
    PairwiseTable,
};
pub use report::{
    agreement_report, AgreementReport, AnnotatorComparison, PairComparison, PairStats, ReportOptions, RowKind,
    SummaryRow,
};
pub use roc::{roc_auc, RocCurve, RocPoint};
pub use ttest::{ln_gamma, regularized_incomplete_beta, student_t_two_sided_p, welch_t_test, WelchResult};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("series is empty")]
    EmptySeries,
    #[error("robust agreement needs exactly three other annotators, got {0}")]
    RequiresExactlyThreeOthers(usize),
    #[error("no value for annotator pair ({0}, {1})")]
    MissingPair(String, String),
    #[error("t-test needs at least two samples per side, got {x} and {y}")]
    InsufficientSamples { x: usize, y: usize },
    #[error("both samples have zero variance and different means")]
    ZeroVarianceBoth,
    #[error("ROC needs at least one positive and one negative")]
    OneClassOnly,
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("invalid report input: {0}")]
    InvalidInput(String),
}

/// A point estimate with its interval; `lo <= value <= hi` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn clamped(value: f64, half_width: f64, min: f64, max: f64) -> Self {
        Estimate {
            value,
            lo: (value - half_width).max(min),
            hi: (value + half_width).min(max),
        }
    }
}

/// `p ± 1.96 sqrt(p (1 - p) / n)` clamped to [0, 1].
pub fn normal_ci(p: f64, n: usize) -> Estimate {
    let half = Z_95 * (p * (1.0 - p) / n as f64).max(0.0).sqrt();
    Estimate::clamped(p, half, 0.0, 1.0)
}
