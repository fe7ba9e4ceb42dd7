use std::collections::BTreeMap;

use histopattern::io::{csv_string, read_annotations, read_manifest, write_atomic, write_json};
use histopattern::preprocess::{build_balanced_training_set, ChannelAccumulator, CropRef};
use histopattern::{AnnotationCrop, HistologicPattern};
use image::imageops;
use rayon::prelude::*;

use super::{ensure_exists, load_rgb, required_path};
use crate::error::{CliError, CliResult};
use crate::{Context, StatsArgs};

/// Channel statistics over every annotated crop pixel, written to
/// `channel_stats.json`. With `--per-class`, also `training_manifest.csv`.
pub fn run(ctx: &Context, args: &StatsArgs) -> CliResult<()> {
    let annotations = required_path(
        args.annotations.as_ref(),
        ctx.config.annotations.as_ref(),
        "annotations",
    )?;
    let manifest = required_path(args.manifest.as_ref(), ctx.config.manifest.as_ref(), "manifest")?;
    let crops = read_annotations(&annotations)?;
    let slides: BTreeMap<String, std::path::PathBuf> = read_manifest(&manifest)?
        .into_iter()
        .map(|r| (r.slide_id, r.path))
        .collect();

    let mut by_slide: BTreeMap<&str, Vec<&AnnotationCrop>> = BTreeMap::new();
    for crop in &crops {
        if !slides.contains_key(&crop.slide_id) {
            return Err(CliError::invalid(format!(
                "annotation references slide {} which is not in the manifest",
                crop.slide_id
            )));
        }
        by_slide.entry(crop.slide_id.as_str()).or_default().push(crop);
    }
    for id in by_slide.keys() {
        ensure_exists(&slides[*id])?;
    }

    // per-slide partial sums, merged in slide order for a deterministic result
    let partials: Vec<CliResult<ChannelAccumulator>> = by_slide
        .par_iter()
        .map(|(id, crops)| {
            let image = load_rgb(&slides[*id])?;
            let mut acc = ChannelAccumulator::new();
            for crop in crops {
                let r = crop.rect;
                if !r.fits_within(image.width(), image.height()) {
                    return Err(CliError::invalid(format!(
                        "annotation {}x{} at ({}, {}) lies outside slide {id}",
                        r.width, r.height, r.x, r.y
                    )));
                }
                acc.push_image(&imageops::crop_imm(&image, r.x, r.y, r.width, r.height).to_image());
            }
            Ok(acc)
        })
        .collect();
    let mut total = ChannelAccumulator::new();
    for p in partials {
        total.merge(&p?);
    }
    let stats = total
        .finish(args.dataset_id.as_str())
        .map_err(|e| CliError::invalid(format!("no crop pixels to summarize: {e}")))?;

    let mut manifest = None;
    if let Some(per_class) = args.per_class {
        let mut by_class: BTreeMap<HistologicPattern, Vec<CropRef>> = BTreeMap::new();
        for (i, crop) in crops.iter().enumerate() {
            by_class.entry(crop.label).or_default().push(CropRef {
                crop_id: format!("{}:{i}", crop.slide_id),
                width: crop.rect.width,
                height: crop.rect.height,
            });
        }
        let entries = build_balanced_training_set(&by_class, ctx.config.tiler.window, per_class, &ctx.config.augment)
            .map_err(|e| CliError::invalid(e.to_string()))?;
        manifest = Some(csv_string(
            &["class", "crop_id", "x", "y", "side", "draw_index"],
            &entries,
        ));
    }
    write_json(&ctx.output.join("channel_stats.json"), &stats)?;
    if let Some(csv) = manifest {
        write_atomic(&ctx.output.join("training_manifest.csv"), csv.as_bytes())?;
    }
    println!(
        "channel mean {:?}, std {:?} over {} crops",
        stats.mean,
        stats.std,
        crops.len()
    );
    Ok(())
}
