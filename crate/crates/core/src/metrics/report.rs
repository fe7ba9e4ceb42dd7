//! Pairwise and per-annotator agreement summary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::kappa::{
    cohen_kappa, kappa_standard_error, kappa_with_ci, predominant_matches, proportion, robust_matches, LabeledSeries,
    PairwiseTable,
};
use super::roc::RocCurve;
use super::ttest::{welch_t_test, WelchResult};
use super::{normal_ci, Estimate, MetricsError, Z_95};
use crate::model::HistologicPattern;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub a: String,
    pub b: String,
    pub kappa_predom: Estimate,
    pub kappa_se: f64,
    pub po: f64,
    pub pe: f64,
    pub agreement: Estimate,
    /// Presence kappa for each cancerous pattern.
    pub per_class_kappa: BTreeMap<HistologicPattern, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Annotator,
    InterAnnotator,
    Baseline,
    Model,
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub kind: RowKind,
    pub average_kappa: Estimate,
    pub average_agreement: Estimate,
    pub robust_agreement: Option<Estimate>,
}

/// Welch test between the per-slide agreement indicators of two pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub first: [String; 2],
    pub second: [String; 2],
    pub welch: Option<WelchResult>,
    pub error: Option<String>,
    pub kappa_ci_overlap: bool,
}

/// Welch test between two annotators' robust-agreement indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorComparison {
    pub first: String,
    pub second: String,
    pub welch: Option<WelchResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportOptions {
    /// Which series is the model; the rest are treated as pathologists.
    pub model_id: Option<String>,
    /// Optional extra series summarized against the pathologists only.
    pub baseline: Option<LabeledSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_slides: usize,
    pub annotators: Vec<String>,
    pub model_id: Option<String>,
    pub pairs: Vec<PairStats>,
    pub rows: Vec<SummaryRow>,
    pub agreement_tests: Vec<PairComparison>,
    pub robust_tests: Vec<AnnotatorComparison>,
}

fn welch_outcome(x: &[bool], y: &[bool]) -> (Option<WelchResult>, Option<String>) {
    let to_f = |v: &[bool]| v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    match welch_t_test(&to_f(x), &to_f(y)) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

struct PairData {
    stats: PairStats,
    matches: Vec<bool>,
}

fn pair_data(a: &LabeledSeries, b: &LabeledSeries) -> Result<PairData, MetricsError> {
    let k = cohen_kappa(&a.predominant(), &b.predominant())?;
    let matches = predominant_matches(a, b)?;
    let mut per_class = BTreeMap::new();
    for class in HistologicPattern::CANCEROUS {
        per_class.insert(class, cohen_kappa(&a.presence(class), &b.presence(class))?.kappa);
    }
    Ok(PairData {
        stats: PairStats {
            a: a.annotator_id.clone(),
            b: b.annotator_id.clone(),
            kappa_predom: kappa_with_ci(&k),
            kappa_se: kappa_standard_error(&k),
            po: k.po,
            pe: k.pe,
            agreement: proportion(&matches),
            per_class_kappa: per_class,
        },
        matches,
    })
}

/// Averages over a set of pairs: kappa as mean ± 1.96 mean(SE), agreement as
/// a proportion on the slide count.
fn averaged(pairs: &[&PairStats], n: usize) -> (Estimate, Estimate) {
    let m = pairs.len() as f64;
    let kappa = pairs.iter().map(|p| p.kappa_predom.value).sum::<f64>() / m;
    let se = pairs.iter().map(|p| p.kappa_se).sum::<f64>() / m;
    let agreement = pairs.iter().map(|p| p.agreement.value).sum::<f64>() / m;
    (Estimate::clamped(kappa, Z_95 * se, -1.0, 1.0), normal_ci(agreement, n))
}

fn validate(series: &[LabeledSeries], options: &ReportOptions) -> Result<usize, MetricsError> {
    if series.len() < 2 {
        return Err(MetricsError::InvalidInput("at least two series are required".into()));
    }
    let ids: BTreeSet<&str> = series.iter().map(|s| s.annotator_id.as_str()).collect();
    if ids.len() != series.len() {
        return Err(MetricsError::InvalidInput("annotator ids must be unique".into()));
    }
    if let Some(m) = &options.model_id {
        if !ids.contains(m.as_str()) {
            return Err(MetricsError::InvalidInput(format!(
                "model id {m} is not among the series"
            )));
        }
    }
    if let Some(b) = &options.baseline {
        if ids.contains(b.annotator_id.as_str()) {
            return Err(MetricsError::InvalidInput(
                "baseline id collides with an annotator".into(),
            ));
        }
    }
    let n = series[0].labels.len();
    if n == 0 {
        return Err(MetricsError::EmptySeries);
    }
    for s in series.iter().chain(options.baseline.as_ref()) {
        if s.labels.len() != n {
            return Err(MetricsError::LengthMismatch {
                left: n,
                right: s.labels.len(),
            });
        }
    }
    Ok(n)
}

/// Every pairwise statistic plus per-annotator summaries.
///
/// Rows come in input order for the non-model annotators, then the
/// inter-annotator average over those, then the baseline and the model when
/// present. Robust agreement needs four series; with any other count it is
/// omitted.
pub fn agreement_report(series: &[LabeledSeries], options: &ReportOptions) -> Result<AgreementReport, MetricsError> {
    let n = validate(series, options)?;
    let ids: Vec<&str> = series.iter().map(|s| s.annotator_id.as_str()).collect();
    let is_model = |id: &str| options.model_id.as_deref() == Some(id);
    let pathologists: Vec<&str> = ids.iter().copied().filter(|&id| !is_model(id)).collect();

    let mut pairs = Vec::new();
    for i in 0..series.len() {
        for j in i + 1..series.len() {
            pairs.push(pair_data(&series[i], &series[j])?);
        }
    }
    let find = |a: &str, b: &str| {
        pairs
            .iter()
            .find(|p| (p.stats.a == a && p.stats.b == b) || (p.stats.a == b && p.stats.b == a))
            .expect("all pairs computed")
    };

    let robust: BTreeMap<&str, Vec<bool>> = if series.len() == 4 {
        let mut out = BTreeMap::new();
        for (i, s) in series.iter().enumerate() {
            let others: Vec<&LabeledSeries> = series
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| o)
                .collect();
            out.insert(s.annotator_id.as_str(), robust_matches(s, &others)?);
        }
        out
    } else {
        BTreeMap::new()
    };

    let mut kappa_table = PairwiseTable::new();
    for p in &pairs {
        kappa_table.insert(&p.stats.a, &p.stats.b, p.stats.kappa_predom.value);
    }

    let mut rows = Vec::new();
    let row_for = |id: &str, kind: RowKind| {
        let involved: Vec<&PairStats> = ids.iter().filter(|&&o| o != id).map(|o| &find(id, o).stats).collect();
        let (kappa, agreement) = averaged(&involved, n);
        debug_assert!((kappa.value - kappa_table.average_for(id, &ids).unwrap_or(f64::NAN)).abs() < 1e-12);
        SummaryRow {
            label: id.to_string(),
            kind,
            average_kappa: kappa,
            average_agreement: agreement,
            robust_agreement: robust.get(id).map(|m| proportion(m)),
        }
    };
    for &id in &pathologists {
        rows.push(row_for(id, RowKind::Annotator));
    }
    if pathologists.len() >= 2 {
        let within: Vec<&PairStats> = pairs
            .iter()
            .filter(|p| !is_model(&p.stats.a) && !is_model(&p.stats.b))
            .map(|p| &p.stats)
            .collect();
        let (kappa, agreement) = averaged(&within, n);
        let robust_values: Option<Vec<f64>> = pathologists
            .iter()
            .map(|id| robust.get(id).map(|m| proportion(m).value))
            .collect();
        rows.push(SummaryRow {
            label: "inter-annotator".into(),
            kind: RowKind::InterAnnotator,
            average_kappa: kappa,
            average_agreement: agreement,
            robust_agreement: robust_values.map(|v| normal_ci(v.iter().sum::<f64>() / v.len() as f64, n)),
        });
    }
    if let Some(baseline) = &options.baseline {
        let refs: Vec<&LabeledSeries> = series.iter().filter(|s| !is_model(&s.annotator_id)).collect();
        let data = refs
            .iter()
            .map(|r| pair_data(baseline, r))
            .collect::<Result<Vec<_>, _>>()?;
        let stats: Vec<&PairStats> = data.iter().map(|d| &d.stats).collect();
        let (kappa, agreement) = averaged(&stats, n);
        let robust = if refs.len() == 3 {
            Some(proportion(&robust_matches(baseline, &refs)?))
        } else {
            None
        };
        rows.push(SummaryRow {
            label: baseline.annotator_id.clone(),
            kind: RowKind::Baseline,
            average_kappa: kappa,
            average_agreement: agreement,
            robust_agreement: robust,
        });
    }
    if let Some(model) = &options.model_id {
        rows.push(row_for(model, RowKind::Model));
    }

    let mut agreement_tests = Vec::new();
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let (p, q) = (&pairs[i], &pairs[j]);
            let (welch, error) = welch_outcome(&p.matches, &q.matches);
            let (kp, kq) = (&p.stats.kappa_predom, &q.stats.kappa_predom);
            agreement_tests.push(PairComparison {
                first: [p.stats.a.clone(), p.stats.b.clone()],
                second: [q.stats.a.clone(), q.stats.b.clone()],
                welch,
                error,
                kappa_ci_overlap: kp.lo <= kq.hi && kq.lo <= kp.hi,
            });
        }
    }

    let mut robust_tests = Vec::new();
    if !robust.is_empty() {
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let (welch, error) = welch_outcome(&robust[ids[i]], &robust[ids[j]]);
                robust_tests.push(AnnotatorComparison {
                    first: ids[i].to_string(),
                    second: ids[j].to_string(),
                    welch,
                    error,
                });
            }
        }
    }

    Ok(AgreementReport {
        n_slides: n,
        annotators: ids.iter().map(|s| s.to_string()).collect(),
        model_id: options.model_id.clone(),
        pairs: pairs.into_iter().map(|p| p.stats).collect(),
        rows,
        agreement_tests,
        robust_tests,
    })
}

fn kappa_cell(e: &Estimate) -> String {
    format!("{:.3} ({:.3}-{:.3})", e.value, e.lo, e.hi)
}

fn percent_cell(e: &Estimate) -> String {
    format!("{:.1} ({:.1}-{:.1})", 100.0 * e.value, 100.0 * e.lo, 100.0 * e.hi)
}

impl AgreementReport {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairStats> {
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }

    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Fixed-width text: the summary table, then pairwise matrices for the
    /// predominant kappa, the predominant agreement and each class kappa.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(self.annotators.iter().map(String::len))
            .max()
            .unwrap_or(0)
            .max(16);
        let _ = writeln!(
            out,
            "{:<label_w$}  {:<22}  {:<20}  {:<20}",
            "", "Kappa score", "Agreement (%)", "Robust agreement (%)"
        );
        for r in &self.rows {
            let robust = r
                .robust_agreement
                .as_ref()
                .map(percent_cell)
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<label_w$}  {:<22}  {:<20}  {:<20}",
                r.label,
                kappa_cell(&r.average_kappa),
                percent_cell(&r.average_agreement),
                robust
            );
        }

        let matrix = |out: &mut String, title: &str, cell: &dyn Fn(&PairStats) -> String| {
            let _ = writeln!(out, "\n{title}");
            let _ = write!(out, "{:<label_w$}", "");
            for id in &self.annotators {
                let _ = write!(out, "  {id:>8}");
            }
            let _ = writeln!(out);
            for a in &self.annotators {
                let _ = write!(out, "{a:<label_w$}");
                for b in &self.annotators {
                    let text = if a == b {
                        "-".to_string()
                    } else {
                        self.pair(a, b).map(cell).unwrap_or_default()
                    };
                    let _ = write!(out, "  {text:>8}");
                }
                let _ = writeln!(out);
            }
        };
        matrix(&mut out, "Predominant kappa", &|p| {
            format!("{:.3}", p.kappa_predom.value)
        });
        matrix(&mut out, "Predominant agreement (%)", &|p| {
            format!("{:.1}", 100.0 * p.agreement.value)
        });
        for class in HistologicPattern::CANCEROUS {
            matrix(&mut out, &format!("Kappa for {class}"), &|p| {
                format!("{:.3}", p.per_class_kappa[&class])
            });
        }
        out
    }

    /// `annotator_a,annotator_b,class,kappa`, one row per pair and class.
    pub fn per_class_kappa_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["annotator_a", "annotator_b", "class", "kappa"])
            .expect("in-memory write");
        for p in &self.pairs {
            for (class, k) in &p.per_class_kappa {
                w.write_record([p.a.as_str(), p.b.as_str(), class.name(), &k.to_string()])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

impl RocCurve {
    /// `threshold,fpr,tpr`; the leading point's threshold prints as `inf`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "fpr", "tpr"]).expect("in-memory write");
        for p in &self.points {
            w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}
