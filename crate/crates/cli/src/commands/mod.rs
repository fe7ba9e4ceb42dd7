pub mod calibrate;
pub mod evaluate;
pub mod infer;
pub mod stats;
pub mod synth;
pub mod tile;
pub mod visualize;
pub mod worker;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use histopattern::gateway::ClassifierHandle;
use histopattern::inference::InferenceError;
use histopattern::io::{read_json, write_atomic};
use histopattern::tiler::{skip_background, tile_region};
use histopattern::{PatchGeometry, SlideLabel, ThresholdVector, TilerConfig};
use image::{ImageFormat, RgbImage};

use crate::error::{CliError, CliResult};

/// Picks the command-line path, else the config path, else fails naming the flag.
pub(crate) fn required_path(flag: Option<&PathBuf>, config: Option<&PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or(config)
        .cloned()
        .ok_or_else(|| CliError::invalid(format!("--{name} is required (or set \"{name}\" in the config)")))
}

pub(crate) fn ensure_exists(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::unreadable(path, "no such file"))
    }
}

pub(crate) fn load_rgb(path: &Path) -> CliResult<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| CliError::unreadable(path, e))
}

pub(crate) fn png_bytes(image: &RgbImage) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    image
        .write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| CliError::new(crate::exit::OTHER, format!("PNG encoding failed: {e}")))?;
    Ok(out)
}

pub(crate) fn write_png(path: &Path, image: &RgbImage) -> CliResult<()> {
    Ok(write_atomic(path, &png_bytes(image)?)?)
}

/// Slide ids become file names, so they must be plain names.
pub(crate) fn check_slide_id(id: &str) -> CliResult<()> {
    let bad = id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) || id.chars().any(char::is_control);
    if bad {
        return Err(CliError::invalid(format!(
            "slide id {id:?} cannot be used as a file name"
        )));
    }
    Ok(())
}

pub(crate) fn read_thresholds(path: Option<&PathBuf>) -> CliResult<ThresholdVector> {
    match path {
        Some(p) => Ok(read_json(p)?),
        None => Ok(ThresholdVector::zeros()),
    }
}

pub(crate) fn read_labels(path: &Path) -> CliResult<BTreeMap<String, SlideLabel>> {
    Ok(read_json(path)?)
}

pub(crate) fn tile_slide(slide_id: &str, image: &RgbImage, tiler: &TilerConfig) -> CliResult<Vec<PatchGeometry>> {
    let (w, h) = image.dimensions();
    let tiles = tile_region(w, h, tiler).map_err(|e| CliError::invalid(format!("slide {slide_id}: {e}")))?;
    Ok(skip_background(image, tiles, tiler))
}

pub(crate) fn classifier(ctx: &crate::Context) -> CliResult<ClassifierHandle> {
    ClassifierHandle::from_config(&ctx.config.classifier).map_err(|e| CliError::invalid(e.to_string()))
}

pub(crate) fn inference_error(e: InferenceError) -> CliError {
    match e {
        InferenceError::Classifier { .. } | InferenceError::LengthMismatch { .. } => CliError::worker(e.to_string()),
        other => CliError::invalid(other.to_string()),
    }
}

/// Mean, median and population standard deviation.
pub(crate) fn summary_stats(values: &[u64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<u64>() as f64 / n;
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    } else {
        sorted[mid] as f64
    };
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, median, var.sqrt())
}
