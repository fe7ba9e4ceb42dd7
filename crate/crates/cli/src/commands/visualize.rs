use histopattern::inference::filter_predictions;
use histopattern::io::{read_predictions, write_json};
use histopattern::visualizer::render_overlay;

use super::{check_slide_id, load_rgb, read_thresholds, write_png};
use crate::error::{CliError, CliResult};
use crate::{Context, VisualizeArgs};

/// Writes `<slide_id>.overlay.png` and `<slide_id>.dots.json`.
pub fn run(ctx: &Context, args: &VisualizeArgs) -> CliResult<()> {
    let slide_id = match &args.slide_id {
        Some(id) => id.clone(),
        None => args
            .slide
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    check_slide_id(&slide_id)?;
    let tau = read_thresholds(args.thresholds.as_ref().or(ctx.config.thresholds.as_ref()))?;
    let image = load_rgb(&args.slide)?;
    let mut by_slide = read_predictions(&args.predictions, ctx.config.tiler.window)?;
    if let Some(other) = by_slide.keys().find(|k| **k != slide_id) {
        return Err(CliError::invalid(format!(
            "{} contains slide {other}, expected only {slide_id}",
            args.predictions.display()
        )));
    }
    let predictions = by_slide.remove(&slide_id).unwrap_or_default();
    let (retained, _) = filter_predictions(&predictions, &tau);
    let scale = args.scale.unwrap_or(ctx.config.render_scale);
    let overlay = render_overlay(&image, &retained, &ctx.config.palette, scale)
        .map_err(|e| CliError::invalid(format!("slide {slide_id}: {e}")))?;

    write_png(&ctx.output.join(format!("{slide_id}.overlay.png")), &overlay.image)?;
    write_json(&ctx.output.join(format!("{slide_id}.dots.json")), &overlay.dots)?;
    println!("{slide_id}: {} dots", overlay.dots.len());
    Ok(())
}
