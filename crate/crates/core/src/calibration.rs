//! Per-class confidence thresholds tuned on a labeled development set.
//!
//! The search is coordinate descent over a one-dimensional grid per class:
//! each class in turn is swept across every grid value with the other
//! thresholds held fixed, and the best value is kept. Several passes let
//! interactions between class thresholds settle.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{aggregate, count_retained, AggregationConfig, ThresholdVector};
use crate::model::{HistologicPattern, PatchPrediction, SlideLabel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("development set is empty")]
    EmptyDevSet,
    #[error("dev slide {0} has no predictions")]
    EmptySlide(String),
    #[error("{model} model labels against {reference} references")]
    LengthMismatch { model: usize, reference: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Candidate thresholds, strictly increasing, within [0, 1].
    pub values: Vec<f64>,
    pub passes: usize,
    pub class_order: Vec<HistologicPattern>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            values: GridSpec::steps(20),
            passes: 2,
            class_order: HistologicPattern::ALL.to_vec(),
        }
    }
}

impl GridSpec {
    /// `0, 1/n, ..., (n-1)/n`, each computed as one exact division.
    pub fn steps(n: u32) -> Vec<f64> {
        (0..n).map(|i| f64::from(i) / f64::from(n)).collect()
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.values.is_empty() {
            return Err(CalibrationError::InvalidGrid("no grid values".into()));
        }
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CalibrationError::InvalidGrid("grid values must lie in [0, 1]".into()));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CalibrationError::InvalidGrid(
                "grid values must be strictly increasing".into(),
            ));
        }
        if self.passes == 0 {
            return Err(CalibrationError::InvalidGrid("at least one pass is required".into()));
        }
        let distinct: BTreeSet<_> = self.class_order.iter().collect();
        if self.class_order.len() != 6 || distinct.len() != 6 {
            return Err(CalibrationError::InvalidGrid(
                "class_order must list each of the six classes once".into(),
            ));
        }
        Ok(())
    }
}

/// A development slide with cached, threshold-free predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct DevSlide {
    pub slide_id: String,
    pub predictions: Vec<PatchPrediction>,
    pub reference: SlideLabel,
}

fn jaccard(a: &BTreeSet<HistologicPattern>, b: &BTreeSet<HistologicPattern>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Per-slide score: half for a matching predominant pattern (Indeterminate
/// matches Indeterminate), half for the Jaccard index of the full label sets.
pub fn slide_correspondence(model: &SlideLabel, reference: &SlideLabel) -> f64 {
    let predominant = if model.predominant() == reference.predominant() {
        1.0
    } else {
        0.0
    };
    0.5 * predominant + 0.5 * jaccard(&model.label_set(), &reference.label_set())
}

/// Mean of [`slide_correspondence`] over aligned label lists.
pub fn calibration_objective(model: &[SlideLabel], references: &[SlideLabel]) -> Result<f64, CalibrationError> {
    if model.len() != references.len() || model.is_empty() {
        return Err(CalibrationError::LengthMismatch {
            model: model.len(),
            reference: references.len(),
        });
    }
    let total: f64 = model
        .iter()
        .zip(references)
        .map(|(m, r)| slide_correspondence(m, r))
        .sum();
    Ok(total / model.len() as f64)
}

/// Objective of a threshold vector on the dev set, filtering and aggregating
/// every slide from scratch.
pub fn evaluate_thresholds(dev: &[DevSlide], tau: &ThresholdVector, config: &AggregationConfig) -> f64 {
    let total: f64 = dev
        .iter()
        .map(|slide| {
            let label = aggregate(&count_retained(&slide.predictions, tau), config);
            slide_correspondence(&label, &slide.reference)
        })
        .sum();
    total / dev.len() as f64
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub pass: usize,
    pub class: HistologicPattern,
    pub value: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub tau: ThresholdVector,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
    /// Objective after each class sweep, in sweep order.
    pub accepted: Vec<f64>,
}

/// Coordinate-descent grid search. Every threshold starts at the smallest
/// grid value; each sweep keeps the best value for its class, ties going to
/// the smaller value.
pub fn grid_search_thresholds(
    dev: &[DevSlide],
    grid: &GridSpec,
    config: &AggregationConfig,
) -> Result<CalibrationResult, CalibrationError> {
    if dev.is_empty() {
        return Err(CalibrationError::EmptyDevSet);
    }
    if let Some(s) = dev.iter().find(|s| s.predictions.is_empty()) {
        return Err(CalibrationError::EmptySlide(s.slide_id.clone()));
    }
    grid.validate()?;

    let start = grid.values[0];
    let mut tau = ThresholdVector::uniform(start).expect("grid values lie in [0, 1]");
    let mut trace = Vec::with_capacity(grid.passes * 6 * grid.values.len());
    let mut accepted = Vec::with_capacity(grid.passes * 6);

    for pass in 1..=grid.passes {
        for &class in &grid.class_order {
            let scores: Vec<f64> = grid
                .values
                .par_iter()
                .map(|&v| {
                    let candidate = tau.with(class, v).expect("grid values lie in [0, 1]");
                    evaluate_thresholds(dev, &candidate, config)
                })
                .collect();
            let mut best = 0;
            for (i, &score) in scores.iter().enumerate() {
                trace.push(TraceRow {
                    pass,
                    class,
                    value: grid.values[i],
                    objective: score,
                });
                if score > scores[best] {
                    best = i;
                }
            }
            tau = tau.with(class, grid.values[best]).expect("grid values lie in [0, 1]");
            accepted.push(scores[best]);
        }
    }

    let objective = evaluate_thresholds(dev, &tau, config);
    Ok(CalibrationResult {
        tau,
        objective,
        trace,
        accepted,
    })
}
