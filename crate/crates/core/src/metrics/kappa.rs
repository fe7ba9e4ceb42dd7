//! Cohen's kappa and the slide-level agreement measures built on it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{normal_ci, Estimate, MetricsError, Z_95};
use crate::model::{HistologicPattern, SlideLabel};

/// One annotator's labels, one per slide, in a slide order shared by every
/// series being compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub annotator_id: String,
    pub labels: Vec<SlideLabel>,
}

impl LabeledSeries {
    pub fn new(annotator_id: impl Into<String>, labels: Vec<SlideLabel>) -> Self {
        LabeledSeries {
            annotator_id: annotator_id.into(),
            labels,
        }
    }

    pub fn predominant(&self) -> Vec<Option<HistologicPattern>> {
        self.labels.iter().map(SlideLabel::predominant).collect()
    }

    pub fn presence(&self, class: HistologicPattern) -> Vec<bool> {
        self.labels.iter().map(|l| l.contains(class)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaStats {
    pub kappa: f64,
    /// Observed agreement.
    pub po: f64,
    /// Chance agreement from the two marginals.
    pub pe: f64,
    pub n: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(MetricsError::EmptySeries);
    }
    Ok(())
}

/// `(po - pe) / (1 - pe)`. When the marginals make chance agreement certain
/// (`pe = 1`) kappa is 1 if the series agree everywhere and 0 otherwise.
///
/// Computed over integer counts and divided once, so symmetric and
/// relabelled inputs give bit-identical results.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<KappaStats, MetricsError> {
    check_lengths(a.len(), b.len())?;
    let n = a.len() as u128;
    let mut marginals: BTreeMap<&T, (u128, u128)> = BTreeMap::new();
    let mut agree = 0u128;
    for (x, y) in a.iter().zip(b) {
        marginals.entry(x).or_default().0 += 1;
        marginals.entry(y).or_default().1 += 1;
        if x == y {
            agree += 1;
        }
    }
    let chance: u128 = marginals.values().map(|(ca, cb)| ca * cb).sum();
    let nn = n * n;
    let po = agree as f64 / n as f64;
    let pe = chance as f64 / nn as f64;
    let kappa = if chance == nn {
        if agree == n {
            1.0
        } else {
            0.0
        }
    } else {
        // (agree/n - chance/n²) / (1 - chance/n²)
        let num = agree as i128 * n as i128 - chance as i128;
        let den = (nn - chance) as i128;
        num as f64 / den as f64
    };
    Ok(KappaStats {
        kappa,
        po,
        pe,
        n: a.len(),
    })
}

/// Kappa with a normal-approximation interval,
/// `SE = sqrt(po (1 - po) / (n (1 - pe)^2))`, clamped to [-1, 1].
pub fn kappa_with_ci(stats: &KappaStats) -> Estimate {
    let se = kappa_standard_error(stats);
    Estimate::clamped(stats.kappa, Z_95 * se, -1.0, 1.0)
}

pub fn kappa_standard_error(stats: &KappaStats) -> f64 {
    let denom = stats.n as f64 * (1.0 - stats.pe).powi(2);
    if denom <= 0.0 {
        return 0.0;
    }
    (stats.po * (1.0 - stats.po) / denom).sqrt()
}

fn check_aligned(a: &LabeledSeries, b: &LabeledSeries) -> Result<(), MetricsError> {
    check_lengths(a.labels.len(), b.labels.len())
}

/// Kappa on predominant labels only; Indeterminate is its own category.
pub fn kappa_predom(a: &LabeledSeries, b: &LabeledSeries) -> Result<(KappaStats, Estimate), MetricsError> {
    check_aligned(a, b)?;
    let stats = cohen_kappa(&a.predominant(), &b.predominant())?;
    Ok((stats, kappa_with_ci(&stats)))
}

/// Per-slide indicator of whether two series agree on the predominant pattern.
pub fn predominant_matches(a: &LabeledSeries, b: &LabeledSeries) -> Result<Vec<bool>, MetricsError> {
    check_aligned(a, b)?;
    Ok(a.labels
        .iter()
        .zip(&b.labels)
        .map(|(x, y)| x.predominant() == y.predominant())
        .collect())
}

/// Fraction of slides with the same predominant pattern, with a normal
/// interval clamped to [0, 1].
pub fn predominant_agreement(a: &LabeledSeries, b: &LabeledSeries) -> Result<Estimate, MetricsError> {
    let matches = predominant_matches(a, b)?;
    Ok(proportion(&matches))
}

pub(crate) fn proportion(indicators: &[bool]) -> Estimate {
    let n = indicators.len();
    let hits = indicators.iter().filter(|&&x| x).count();
    let p = hits as f64 / n as f64;
    normal_ci(p, n)
}

/// Kappa on presence of one pattern, as predominant or minor.
pub fn per_class_kappa(a: &LabeledSeries, b: &LabeledSeries, class: HistologicPattern) -> Result<f64, MetricsError> {
    check_aligned(a, b)?;
    Ok(cohen_kappa(&a.presence(class), &b.presence(class))?.kappa)
}

/// Per-slide indicator that the target's predominant pattern matches at
/// least two of the three other annotators.
pub fn robust_matches(target: &LabeledSeries, others: &[&LabeledSeries]) -> Result<Vec<bool>, MetricsError> {
    if others.len() != 3 {
        return Err(MetricsError::RequiresExactlyThreeOthers(others.len()));
    }
    for o in others {
        check_aligned(target, o)?;
    }
    Ok((0..target.labels.len())
        .map(|i| {
            let mine = target.labels[i].predominant();
            others.iter().filter(|o| o.labels[i].predominant() == mine).count() >= 2
        })
        .collect())
}

pub fn robust_agreement(target: &LabeledSeries, others: &[&LabeledSeries]) -> Result<Estimate, MetricsError> {
    Ok(proportion(&robust_matches(target, others)?))
}

/// Symmetric table of values keyed by unordered annotator pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairwiseTable {
    values: BTreeMap<(String, String), f64>,
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl PairwiseTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str, value: f64) {
        self.values.insert(ordered(a, b), value);
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        self.values.get(&ordered(a, b)).copied()
    }

    fn require(&self, a: &str, b: &str) -> Result<f64, MetricsError> {
        self.get(a, b)
            .ok_or_else(|| MetricsError::MissingPair(a.to_string(), b.to_string()))
    }

    /// Mean over the pairs joining `target` to every other annotator.
    pub fn average_for(&self, target: &str, annotators: &[&str]) -> Result<f64, MetricsError> {
        let others: Vec<&str> = annotators.iter().copied().filter(|&a| a != target).collect();
        if others.is_empty() {
            return Err(MetricsError::EmptySeries);
        }
        let mut total = 0.0;
        for o in &others {
            total += self.require(target, o)?;
        }
        Ok(total / others.len() as f64)
    }

    /// Mean over every pair within a group (the inter-pathologist figure).
    pub fn average_within(&self, group: &[&str]) -> Result<f64, MetricsError> {
        let mut total = 0.0;
        let mut count = 0;
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                total += self.require(a, b)?;
                count += 1;
            }
        }
        if count == 0 {
            return Err(MetricsError::EmptySeries);
        }
        Ok(total / count as f64)
    }
}

/// Mean of the target's pairwise kappas with every other annotator.
pub fn average_kappa(target_id: &str, annotators: &[&str], pairwise: &PairwiseTable) -> Result<f64, MetricsError> {
    pairwise.average_for(target_id, annotators)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_slide_label;
    use HistologicPattern::*;

    fn predom(id: &str, labels: &[Option<HistologicPattern>]) -> LabeledSeries {
        LabeledSeries::new(
            id,
            labels.iter().map(|&p| normalize_slide_label(p, []).unwrap()).collect(),
        )
    }

    #[test]
    fn identical_series() {
        let k = cohen_kappa(&[1, 2, 3, 1], &[1, 2, 3, 1]).unwrap();
        assert_eq!((k.kappa, k.po), (1.0, 1.0));
    }

    #[test]
    fn worked_kappa_example() {
        // 5 acinar then 5 lepidic; b swaps one from each block
        let a = [
            Acinar, Acinar, Acinar, Acinar, Acinar, Lepidic, Lepidic, Lepidic, Lepidic, Lepidic,
        ];
        let b = [
            Acinar, Acinar, Acinar, Acinar, Lepidic, Acinar, Lepidic, Lepidic, Lepidic, Lepidic,
        ];
        let k = cohen_kappa(&a, &b).unwrap();
        assert!((k.po - 0.8).abs() < 1e-15);
        assert!((k.pe - 0.5).abs() < 1e-15);
        assert!((k.kappa - 0.6).abs() < 1e-15);

        let sa = predom("a", &a.map(Some));
        let sb = predom("b", &b.map(Some));
        let (_, est) = kappa_predom(&sa, &sb).unwrap();
        // SE = sqrt(0.8 * 0.2 / (10 * 0.25)) = 0.25298
        let half = 1.96 * (0.064f64).sqrt();
        assert!((est.lo - (0.6 - half)).abs() < 1e-12);
        assert!((est.lo - 0.104).abs() < 1e-3);
        assert_eq!(est.hi, 1.0);
    }

    #[test]
    fn degenerate_constant_series() {
        let k = cohen_kappa(&[Acinar; 4], &[Acinar; 4]).unwrap();
        assert_eq!((k.kappa, k.po, k.pe), (1.0, 1.0, 1.0));
        let (_, est) = kappa_predom(&predom("a", &[Some(Solid); 3]), &predom("b", &[Some(Solid); 3])).unwrap();
        assert_eq!((est.value, est.lo, est.hi), (1.0, 1.0, 1.0));
    }

    #[test]
    fn kappa_errors() {
        assert_eq!(
            cohen_kappa(&[1, 2], &[1]).unwrap_err(),
            MetricsError::LengthMismatch { left: 2, right: 1 }
        );
        assert_eq!(cohen_kappa::<u8>(&[], &[]).unwrap_err(), MetricsError::EmptySeries);
    }

    #[test]
    fn agreement_examples() {
        let a = predom("a", &[Some(Acinar); 10]);
        let mut b_labels = vec![Some(Acinar); 8];
        b_labels.extend([Some(Solid), None]);
        let b = predom("b", &b_labels);
        let est = predominant_agreement(&a, &b).unwrap();
        assert!((est.value - 0.8).abs() < 1e-15);
        assert!((est.lo - 0.552).abs() < 1e-3);
        assert_eq!(est.hi, 1.0);

        let one = predominant_agreement(&a, &a).unwrap();
        assert_eq!((one.value, one.lo, one.hi), (1.0, 1.0, 1.0));

        let x = predom("x", &[Some(Acinar); 4]);
        let y = predom("y", &[Some(Solid); 4]);
        assert_eq!(predominant_agreement(&x, &y).unwrap().value, 0.0);
    }

    #[test]
    fn per_class_examples() {
        let with = |present: &[bool]| {
            LabeledSeries::new(
                "s",
                present
                    .iter()
                    .map(|&p| {
                        if p {
                            normalize_slide_label(Some(Acinar), [Papillary]).unwrap()
                        } else {
                            normalize_slide_label(Some(Acinar), []).unwrap()
                        }
                    })
                    .collect(),
            )
        };
        let a = with(&[true, true, false, false]);
        let b = with(&[true, false, true, false]);
        assert_eq!(per_class_kappa(&a, &a, Papillary).unwrap(), 1.0);
        assert_eq!(per_class_kappa(&a, &b, Papillary).unwrap(), 0.0);
        // absent everywhere for both
        assert_eq!(per_class_kappa(&a, &b, Micropapillary).unwrap(), 1.0);
    }

    #[test]
    fn robust_rule() {
        let t = predom("t", &[Some(Acinar), Some(Acinar)]);
        let o1 = predom("1", &[Some(Acinar), Some(Acinar)]);
        let o2 = predom("2", &[Some(Acinar), Some(Solid)]);
        let o3 = predom("3", &[Some(Solid), Some(Lepidic)]);
        assert_eq!(robust_matches(&t, &[&o1, &o2, &o3]).unwrap(), vec![true, false]);
        assert_eq!(robust_agreement(&t, &[&t, &t, &t]).unwrap().value, 1.0);
        assert_eq!(
            robust_agreement(&t, &[&o1, &o2]).unwrap_err(),
            MetricsError::RequiresExactlyThreeOthers(2)
        );
    }

    #[test]
    fn average_kappa_rules() {
        let mut table = PairwiseTable::new();
        table.insert("P1", "P2", 0.4);
        table.insert("P3", "P1", 0.5);
        table.insert("P1", "M", 0.6);
        let ids = ["P1", "P2", "P3", "M"];
        assert!((average_kappa("P1", &ids, &table).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(
            average_kappa("P2", &ids, &table).unwrap_err(),
            MetricsError::MissingPair("P2".into(), "P3".into())
        );
        table.insert("P2", "P3", 0.7);
        assert!((table.average_within(&["P1", "P2", "P3"]).unwrap() - (0.4 + 0.5 + 0.7) / 3.0).abs() < 1e-15);
    }
}
