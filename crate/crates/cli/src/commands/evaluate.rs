use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use histopattern::io::{read_predictions, write_atomic, write_json};
use histopattern::metrics::{
    agreement_report, macro_average, precision_recall_f1, roc_auc, Estimate, LabeledSeries, MacroMetrics, ReportOptions,
};
use histopattern::{HistologicPattern, SlideLabel};
use serde::{Deserialize, Serialize};

use super::read_labels;
use crate::error::{CliError, CliResult};
use crate::{Context, EvaluateArgs};

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Writes `agreement_report.json`, `agreement_table.txt` and
/// `per_class_kappa.csv`; with patch inputs also `patch_metrics.json` and
/// one `roc_<class>.csv` per class.
pub fn run(ctx: &Context, args: &EvaluateArgs) -> CliResult<()> {
    let names: Vec<String> = if args.names.is_empty() {
        args.labels.iter().map(|p| stem(p)).collect()
    } else if args.names.len() == args.labels.len() {
        args.names.clone()
    } else {
        return Err(CliError::invalid(format!(
            "{} names given for {} label files",
            args.names.len(),
            args.labels.len()
        )));
    };

    let mut files: Vec<(String, BTreeMap<String, SlideLabel>)> = Vec::new();
    for (name, path) in names.iter().zip(&args.labels) {
        files.push((name.clone(), read_labels(path)?));
    }
    let baseline = match &args.baseline {
        Some(path) => Some((stem(path), read_labels(path)?)),
        None => None,
    };

    let all_ids: Vec<&BTreeMap<String, SlideLabel>> = files
        .iter()
        .map(|(_, m)| m)
        .chain(baseline.iter().map(|(_, m)| m))
        .collect();
    let union: BTreeSet<&String> = all_ids.iter().flat_map(|m| m.keys()).collect();
    let missing: Vec<&str> = union
        .iter()
        .filter(|id| all_ids.iter().any(|m| !m.contains_key(**id)))
        .map(|s| s.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::invalid(format!(
            "label files disagree on slide ids; not in every file: {}",
            missing.join(", ")
        )));
    }
    if union.is_empty() {
        return Err(CliError::invalid("label files contain no slides"));
    }

    let to_series =
        |name: &str, map: &BTreeMap<String, SlideLabel>| LabeledSeries::new(name, map.values().cloned().collect());
    let series: Vec<LabeledSeries> = files.iter().map(|(n, m)| to_series(n, m)).collect();
    let options = ReportOptions {
        model_id: args.model.clone(),
        baseline: baseline.as_ref().map(|(n, m)| to_series(n, m)),
    };
    let report = agreement_report(&series, &options).map_err(|e| CliError::invalid(e.to_string()))?;

    write_json(&ctx.output.join("agreement_report.json"), &report)?;
    let table = report.to_table();
    write_atomic(&ctx.output.join("agreement_table.txt"), table.as_bytes())?;
    write_atomic(
        &ctx.output.join("per_class_kappa.csv"),
        report.per_class_kappa_csv().as_bytes(),
    )?;
    print!("{table}");

    if let (Some(pred), Some(gt)) = (&args.predictions, &args.ground_truth) {
        patch_metrics(ctx, pred, gt)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TruthRow {
    x: u32,
    y: u32,
    side: u32,
    label: HistologicPattern,
}

#[derive(Debug, Serialize)]
struct ClassReport {
    precision: Option<Estimate>,
    recall: Option<Estimate>,
    f1: Option<Estimate>,
    auc: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PatchReport {
    patches: usize,
    classes: BTreeMap<HistologicPattern, ClassReport>,
    macro_average: MacroMetrics,
}

fn patch_metrics(ctx: &Context, predictions: &Path, ground_truth: &Path) -> CliResult<()> {
    let by_slide = read_predictions(predictions, ctx.config.tiler.window)?;
    if by_slide.len() > 1 {
        return Err(CliError::invalid(format!(
            "{} holds {} slides; patch metrics need exactly one",
            predictions.display(),
            by_slide.len()
        )));
    }
    let preds = by_slide.into_values().next().unwrap_or_default();

    let text = std::fs::read(ground_truth).map_err(|e| CliError::unreadable(ground_truth, e))?;
    let mut truth: BTreeMap<(u32, u32), HistologicPattern> = BTreeMap::new();
    for (i, row) in csv::Reader::from_reader(text.as_slice())
        .deserialize::<TruthRow>()
        .enumerate()
    {
        let row = row.map_err(|e| CliError::invalid(format!("{}: row {}: {e}", ground_truth.display(), i + 1)))?;
        if row.side != ctx.config.tiler.window {
            return Err(CliError::invalid(format!(
                "{}: row {} has side {}, configured window is {}",
                ground_truth.display(),
                i + 1,
                row.side,
                ctx.config.tiler.window
            )));
        }
        truth.insert((row.x, row.y), row.label);
    }

    let mut predicted = Vec::with_capacity(preds.len());
    let mut reference = Vec::with_capacity(preds.len());
    for p in &preds {
        let g = p.geometry();
        let label = truth
            .get(&(g.x, g.y))
            .ok_or_else(|| CliError::invalid(format!("no ground truth for patch at ({}, {})", g.x, g.y)))?;
        predicted.push(p.top_class());
        reference.push(*label);
    }
    if preds.is_empty() {
        return Err(CliError::invalid("no patch predictions to evaluate"));
    }

    let mut classes = BTreeMap::new();
    for class in HistologicPattern::ALL {
        let m = precision_recall_f1(&predicted, &reference, &class).map_err(|e| CliError::invalid(e.to_string()))?;
        let scores: Vec<f64> = preds.iter().map(|p| p.probs().get(class)).collect();
        let positives: Vec<bool> = reference.iter().map(|&r| r == class).collect();
        let auc = match roc_auc(&scores, &positives) {
            Ok(curve) => {
                write_atomic(&ctx.output.join(format!("roc_{class}.csv")), curve.to_csv().as_bytes())?;
                Some(curve.auc)
            }
            Err(_) => None,
        };
        classes.insert(
            class,
            ClassReport {
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                auc,
            },
        );
    }
    let macro_average =
        macro_average(&predicted, &reference, &HistologicPattern::ALL).map_err(|e| CliError::invalid(e.to_string()))?;
    let report = PatchReport {
        patches: preds.len(),
        classes,
        macro_average,
    };
    write_json(&ctx.output.join("patch_metrics.json"), &report)?;
    Ok(())
}
