use std::fs;

use histopattern::io::{patch_coords_csv, read_manifest, write_atomic};
use rayon::prelude::*;

use super::{check_slide_id, ensure_exists, load_rgb, required_path, summary_stats, tile_slide};
use crate::error::CliResult;
use crate::{Context, TileArgs};

/// One `<slide_id>.patches.csv` per slide. On any failure every file this
/// run wrote is removed again.
pub fn run(ctx: &Context, args: &TileArgs) -> CliResult<()> {
    let manifest = required_path(args.manifest.as_ref(), ctx.config.manifest.as_ref(), "manifest")?;
    let rows = read_manifest(&manifest)?;
    for row in &rows {
        check_slide_id(&row.slide_id)?;
        ensure_exists(&row.path)?;
    }

    let results: Vec<CliResult<(std::path::PathBuf, u64)>> = rows
        .par_iter()
        .map(|row| {
            let image = load_rgb(&row.path)?;
            let patches = tile_slide(&row.slide_id, &image, &ctx.config.tiler)?;
            let path = ctx.output.join(format!("{}.patches.csv", row.slide_id));
            write_atomic(&path, patch_coords_csv(&row.slide_id, &patches).as_bytes())?;
            Ok((path, patches.len() as u64))
        })
        .collect();

    if let Some(pos) = results.iter().position(Result::is_err) {
        for (path, _) in results.iter().flatten() {
            let _ = fs::remove_file(path);
        }
        return Err(results.into_iter().nth(pos).expect("position exists").unwrap_err());
    }

    let counts: Vec<u64> = results.into_iter().flatten().map(|(_, n)| n).collect();
    let (mean, median, std) = summary_stats(&counts);
    println!(
        "tiled {} slides, {} patches; per slide mean {mean:.1}, median {median:.1}, std {std:.1}",
        counts.len(),
        counts.iter().sum::<u64>()
    );
    Ok(())
}
