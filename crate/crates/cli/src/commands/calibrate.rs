use std::collections::BTreeMap;

use histopattern::calibration::{grid_search_thresholds, DevSlide};
use histopattern::io::{csv_string, read_predictions, write_atomic, write_json};
use histopattern::PatchPrediction;
use rayon::prelude::*;

use super::infer::{checked_manifest, predict_slide};
use super::{classifier, read_labels};
use crate::error::{CliError, CliResult};
use crate::{CalibrateArgs, Context};

/// Grid-searches thresholds against reference labels and writes
/// `thresholds.json` plus `calibration_trace.csv`.
pub fn run(ctx: &Context, args: &CalibrateArgs) -> CliResult<()> {
    let references = read_labels(&args.labels)?;
    let manifest = args.manifest.as_ref().or(ctx.config.manifest.as_ref());

    let mut predictions: BTreeMap<String, Vec<PatchPrediction>> = BTreeMap::new();
    if !args.predictions.is_empty() {
        for path in &args.predictions {
            for (id, preds) in read_predictions(path, ctx.config.tiler.window)? {
                if predictions.insert(id.clone(), preds).is_some() {
                    return Err(CliError::invalid(format!(
                        "slide {id} appears in more than one predictions file"
                    )));
                }
            }
        }
        if let Some(m) = manifest {
            let rows = checked_manifest(m)?;
            if let Some(row) = rows.iter().find(|r| !predictions.contains_key(&r.slide_id)) {
                return Err(CliError::invalid(format!(
                    "no predictions for dev slide {}",
                    row.slide_id
                )));
            }
            let keep: std::collections::BTreeSet<_> = rows.into_iter().map(|r| r.slide_id).collect();
            predictions.retain(|id, _| keep.contains(id));
        }
    } else {
        let Some(m) = manifest else {
            return Err(CliError::invalid("calibrate needs --manifest or --predictions"));
        };
        let rows = checked_manifest(m)?;
        if let Some(row) = rows.iter().find(|r| !references.contains_key(&r.slide_id)) {
            return Err(CliError::invalid(format!(
                "dev slide {} has no reference label",
                row.slide_id
            )));
        }
        let classifier = classifier(ctx)?;
        let results: Vec<CliResult<Vec<PatchPrediction>>> = rows
            .par_iter()
            .map(|row| predict_slide(ctx, row, &classifier))
            .collect();
        for (row, preds) in rows.iter().zip(results) {
            predictions.insert(row.slide_id.clone(), preds?);
        }
    }

    if predictions.is_empty() {
        return Err(CliError::invalid("development set is empty"));
    }
    let mut dev = Vec::with_capacity(predictions.len());
    for (slide_id, preds) in predictions {
        let reference = references
            .get(&slide_id)
            .cloned()
            .ok_or_else(|| CliError::invalid(format!("dev slide {slide_id} has no reference label")))?;
        dev.push(DevSlide {
            slide_id,
            predictions: preds,
            reference,
        });
    }

    let result = grid_search_thresholds(&dev, &ctx.config.grid, &ctx.config.aggregation)
        .map_err(|e| CliError::invalid(e.to_string()))?;
    write_json(&ctx.output.join("thresholds.json"), &result.tau)?;
    let trace = csv_string(&["pass", "class", "value", "objective"], &result.trace);
    write_atomic(&ctx.output.join("calibration_trace.csv"), trace.as_bytes())?;
    println!(
        "calibrated on {} slides: objective {:.6}, thresholds {}",
        dev.len(),
        result.objective,
        serde_json::to_string(&result.tau).expect("thresholds serialize")
    );
    Ok(())
}
