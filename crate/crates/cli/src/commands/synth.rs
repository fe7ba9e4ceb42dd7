use histopattern::gateway::{ClassColorMap, ClassifierConfig};
use histopattern::inference::aggregate;
use histopattern::io::{read_json, write_atomic, write_json};
use histopattern::synth::{generate_slide, ground_truth_csv, ground_truth_patches, SyntheticSpec};
use histopattern::ClassCounts;

use super::{check_slide_id, write_png};
use crate::error::{CliError, CliResult};
use crate::{Context, SynthArgs};

/// Writes `<name>.png`, `<name>.ground_truth.csv` and
/// `<name>.expected_label.json`.
pub fn run(ctx: &Context, args: &SynthArgs) -> CliResult<()> {
    let mut spec: SyntheticSpec = read_json(&args.spec)?;
    if let Some(seed) = ctx.seed_override {
        spec.seed = seed;
    }
    let name = match &args.name {
        Some(n) => n.clone(),
        None => args
            .spec
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    check_slide_id(&name)?;
    // paint with the oracle's colors so it reads the slide back exactly
    let colors = match &ctx.config.classifier {
        ClassifierConfig::Oracle(o) => o.colors,
        ClassifierConfig::Worker(_) => ClassColorMap::default(),
    };

    let slide = generate_slide(&spec, &colors).map_err(|e| CliError::invalid(e.to_string()))?;
    let patches = ground_truth_patches(&spec, &ctx.config.tiler).map_err(|e| CliError::invalid(e.to_string()))?;
    let mut counts = ClassCounts::default();
    for (_, class) in &patches {
        counts.add(*class);
    }
    let label = aggregate(&counts, &ctx.config.aggregation);

    write_png(&ctx.output.join(format!("{name}.png")), &slide.image)?;
    write_atomic(
        &ctx.output.join(format!("{name}.ground_truth.csv")),
        ground_truth_csv(&patches).as_bytes(),
    )?;
    write_json(&ctx.output.join(format!("{name}.expected_label.json")), &label)?;
    println!("{name}: {} patches, expected {label}", patches.len());
    Ok(())
}
