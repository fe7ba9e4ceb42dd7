//! Precision, recall and F1 for one class of a categorical labelling.

use serde::{Deserialize, Serialize};

use super::{normal_ci, Estimate, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `None` when nothing was predicted as the class.
    pub precision: Option<Estimate>,
    /// `None` when the class never occurs in the reference.
    pub recall: Option<Estimate>,
    /// `None` only when the class is absent from both sides.
    pub f1: Option<Estimate>,
}

/// Precision, recall and F1 for `class`, each with a normal-approximation
/// interval over its own denominator (`2TP + FP + FN` for F1).
pub fn precision_recall_f1<T: PartialEq>(
    predictions: &[T],
    references: &[T],
    class: &T,
) -> Result<ClassMetrics, MetricsError> {
    if predictions.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            left: predictions.len(),
            right: references.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, r) in predictions.iter().zip(references) {
        match (p == class, r == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| normal_ci(num as f64 / den as f64, den));
    Ok(ClassMetrics {
        tp,
        fp,
        fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Unweighted means over `classes`, skipping classes where a metric is
/// undefined. A metric undefined for every class stays `None`.
pub fn macro_average<T: PartialEq>(
    predictions: &[T],
    references: &[T],
    classes: &[T],
) -> Result<MacroMetrics, MetricsError> {
    let per_class = classes
        .iter()
        .map(|c| precision_recall_f1(predictions, references, c))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = |pick: fn(&ClassMetrics) -> Option<Estimate>| {
        let vals: Vec<f64> = per_class.iter().filter_map(pick).map(|e| e.value).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(MacroMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        // class b: tp 2, fp 0, fn 1
        let m = precision_recall_f1(&['a', 'a', 'b', 'b'], &['a', 'b', 'b', 'b'], &'b').unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 1));
        assert_eq!(m.precision.unwrap().value, 1.0);
        assert!((m.recall.unwrap().value - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1.unwrap().value - 0.8).abs() < 1e-15);
    }

    #[test]
    fn undefined_cases() {
        let m = precision_recall_f1(&[1, 1], &[2, 2], &3).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (None, None, None));
        let m = precision_recall_f1(&[1, 1], &[3, 1], &3).unwrap();
        assert!(m.precision.is_none());
        assert_eq!(m.recall.unwrap().value, 0.0);
        assert_eq!(m.f1.unwrap().value, 0.0);
    }

    #[test]
    fn macro_skips_undefined() {
        let m = macro_average(&[1, 1, 2], &[1, 2, 2], &[1, 2, 3]).unwrap();
        // class 1: p 1/2 r 1; class 2: p 1 r 1/2; class 3 undefined
        assert!((m.precision.unwrap() - 0.75).abs() < 1e-15);
        assert!((m.recall.unwrap() - 0.75).abs() < 1e-15);
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let none = macro_average(&[1], &[1], &[5]).unwrap();
        assert_eq!(none.f1, None);
    }

    #[test]
    fn errors() {
        assert_eq!(
            precision_recall_f1(&[1], &[1, 2], &1).unwrap_err(),
            MetricsError::LengthMismatch { left: 1, right: 2 }
        );
    }
}
