//! `histopattern` command-line pipeline: tiling, channel statistics,
//! inference, threshold calibration, agreement reports, overlays and
//! synthetic slides, all driven by CSV/JSON files.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "histopattern", version, about = "Whole-slide histologic pattern pipeline")]
pub struct Cli {
    /// Run configuration JSON.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Output directory (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Worker threads for slide- and batch-level parallelism.
    #[arg(long, global = true, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Seed for every random component.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the patch grid of every slide as CSV.
    Tile(TileArgs),
    /// Channel mean/std over annotated crops, optionally a balanced training manifest.
    Stats(StatsArgs),
    /// Classify and label every slide in a manifest.
    Infer(InferArgs),
    /// Tune per-class thresholds on a development set.
    Calibrate(CalibrateArgs),
    /// Agreement report across annotators and the model.
    Evaluate(EvaluateArgs),
    /// Render predicted patches as colored dots over a slide.
    Visualize(VisualizeArgs),
    /// Generate a synthetic slide with known composition.
    Synth(SynthArgs),
    /// Serve the oracle classifier over the worker protocol on stdin/stdout.
    #[command(hide = true)]
    OracleWorker,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Manifest CSV (slide_id,path).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Annotations CSV (slide_id,x,y,width,height,label).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "training")]
    pub dataset_id: String,
    /// Also write a balanced training manifest with this many patches per class.
    #[arg(long, value_name = "N")]
    pub per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Thresholds JSON; all zeros when absent.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Development manifest; slides are classified with the configured classifier.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Reference slide labels JSON.
    #[arg(long)]
    pub labels: PathBuf,
    /// Precomputed predictions CSVs, used instead of classifying.
    #[arg(long, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Slide label JSON files, one per annotator.
    #[arg(long, num_args = 2.., required = true)]
    pub labels: Vec<PathBuf>,
    /// Comma-separated annotator ids (default: file stems).
    #[arg(long, value_delimiter = ',')]
    pub names: Vec<String>,
    /// Which annotator is the model.
    #[arg(long)]
    pub model: Option<String>,
    /// Baseline slide labels, summarized against the non-model annotators.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Patch predictions CSV for patch-level metrics (needs --ground-truth).
    #[arg(long, requires = "ground_truth")]
    pub predictions: Option<PathBuf>,
    /// Patch ground truth CSV (x,y,side,label).
    #[arg(long, requires = "predictions")]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// Slide image (PNG or TIFF).
    #[arg(long)]
    pub slide: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Slide id within the predictions CSV (default: the image file stem).
    #[arg(long)]
    pub slide_id: Option<String>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Downscale factor in (0, 1].
    #[arg(long)]
    pub scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic slide spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output file prefix (default: the spec file stem).
    #[arg(long)]
    pub name: Option<String>,
}

/// Resolved settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub output: PathBuf,
    /// Seed given on the command line, which overrides seeds inside inputs.
    pub seed_override: Option<u64>,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> CliResult<Self> {
        let mut config = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = cli.parallelism {
            config.parallelism = p;
        }
        if let Some(seed) = cli.seed.or(config.seed) {
            config.apply_seed(seed);
        }
        config.validate()?;
        let output = cli
            .output
            .clone()
            .or_else(|| config.output.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Context {
            config,
            output,
            seed_override: cli.seed,
        })
    }
}

/// Runs a parsed command line inside a thread pool of the configured size.
pub fn run(cli: Cli) -> CliResult<()> {
    let ctx = Context::from_cli(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.parallelism)
        .build()
        .map_err(|e| CliError::new(exit::OTHER, format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Tile(args) => commands::tile::run(&ctx, args),
        Command::Stats(args) => commands::stats::run(&ctx, args),
        Command::Infer(args) => commands::infer::run(&ctx, args),
        Command::Calibrate(args) => commands::calibrate::run(&ctx, args),
        Command::Evaluate(args) => commands::evaluate::run(&ctx, args),
        Command::Visualize(args) => commands::visualize::run(&ctx, args),
        Command::Synth(args) => commands::synth::run(&ctx, args),
        Command::OracleWorker => commands::worker::run(&ctx),
    })
}

/// Parses arguments (the first is the program name) and runs. Help and
/// version requests succeed; usage errors exit with the validation code.
pub fn run_from_args<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            Ok(())
        }
        Err(e) => {
            let text = e.to_string();
            Err(CliError::invalid(
                text.strip_prefix("error: ").unwrap_or(&text).trim_end(),
            ))
        }
    }
}
