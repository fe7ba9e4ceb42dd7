use std::collections::BTreeMap;
use std::time::Instant;

use histopattern::gateway::PatchClassifier;
use histopattern::inference::{baseline_aggregate, classify_slide, label_predictions};
use histopattern::io::{predictions_csv, read_manifest, write_atomic, write_json, ManifestRow};
use histopattern::{ClassCounts, PatchPrediction, SlideLabel};
use rayon::prelude::*;
use serde::Serialize;

use super::{
    check_slide_id, classifier, ensure_exists, inference_error, load_rgb, read_thresholds, required_path, tile_slide,
};
use crate::error::{CliError, CliResult};
use crate::{Context, InferArgs};

/// Tiles and classifies one slide. Predictions come back in tiling order.
pub(crate) fn predict_slide(
    ctx: &Context,
    row: &ManifestRow,
    classifier: &dyn PatchClassifier,
) -> CliResult<Vec<PatchPrediction>> {
    let started = Instant::now();
    let image = load_rgb(&row.path)?;
    let patches = tile_slide(&row.slide_id, &image, &ctx.config.tiler)?;
    let predictions = classify_slide(&row.slide_id, &image, &patches, classifier).map_err(inference_error)?;
    log::info!(
        "slide {}: {} patches classified in {:.2}s",
        row.slide_id,
        predictions.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(predictions)
}

/// Manifest rows after id and existence checks.
pub(crate) fn checked_manifest(path: &std::path::Path) -> CliResult<Vec<ManifestRow>> {
    let rows = read_manifest(path)?;
    for row in &rows {
        check_slide_id(&row.slide_id)?;
        ensure_exists(&row.path)?;
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct SlideSummary {
    patches: usize,
    retained: usize,
    counts: ClassCounts,
}

/// Writes `<slide_id>.predictions.csv` for each slide as it completes, then
/// `slide_labels.json`, `baseline_labels.json` and `inference_summary.json`.
/// When a slide fails, slides already finished keep their outputs and the
/// combined files are not written.
pub fn run(ctx: &Context, args: &InferArgs) -> CliResult<()> {
    let manifest = required_path(args.manifest.as_ref(), ctx.config.manifest.as_ref(), "manifest")?;
    let tau = read_thresholds(args.thresholds.as_ref().or(ctx.config.thresholds.as_ref()))?;
    let rows = checked_manifest(&manifest)?;
    if rows.is_empty() {
        return Err(CliError::invalid("manifest lists no slides"));
    }
    let classifier = classifier(ctx)?;

    let results: Vec<CliResult<(SlideLabel, SlideLabel, SlideSummary)>> = rows
        .par_iter()
        .map(|row| {
            let predictions = predict_slide(ctx, row, &classifier)?;
            let csv = predictions_csv(&row.slide_id, &predictions);
            write_atomic(
                &ctx.output.join(format!("{}.predictions.csv", row.slide_id)),
                csv.as_bytes(),
            )?;
            let baseline = baseline_aggregate(&predictions, &tau).map_err(inference_error)?;
            let out = label_predictions(predictions, &tau, &ctx.config.aggregation);
            let summary = SlideSummary {
                patches: out.predictions.len(),
                retained: out.retained.len(),
                counts: out.counts,
            };
            Ok((out.label, baseline, summary))
        })
        .collect();

    let mut labels = BTreeMap::new();
    let mut baselines = BTreeMap::new();
    let mut summaries = BTreeMap::new();
    for (row, result) in rows.iter().zip(results) {
        let (label, baseline, summary) = result?;
        labels.insert(row.slide_id.clone(), label);
        baselines.insert(row.slide_id.clone(), baseline);
        summaries.insert(row.slide_id.clone(), summary);
    }
    write_json(&ctx.output.join("slide_labels.json"), &labels)?;
    write_json(&ctx.output.join("baseline_labels.json"), &baselines)?;
    write_json(&ctx.output.join("inference_summary.json"), &summaries)?;
    for (id, label) in &labels {
        println!("{id}\t{label}");
    }
    Ok(())
}
