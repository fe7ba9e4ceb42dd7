use std::path::{Path, PathBuf};

use histopattern::calibration::GridSpec;
use histopattern::gateway::ClassifierConfig;
use histopattern::preprocess::AugmentSpec;
use histopattern::visualizer::Palette;
use histopattern::{AggregationConfig, TilerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything a run depends on. Read from `--config`; command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub tiler: TilerConfig,
    pub aggregation: AggregationConfig,
    pub classifier: ClassifierConfig,
    pub grid: GridSpec,
    pub augment: AugmentSpec,
    pub palette: Palette,
    /// Overlay downscale factor in (0, 1].
    pub render_scale: f64,
    pub parallelism: usize,
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            annotations: None,
            stats: None,
            thresholds: None,
            output: None,
            tiler: TilerConfig::default(),
            aggregation: AggregationConfig::default(),
            classifier: ClassifierConfig::default(),
            grid: GridSpec::default(),
            augment: AugmentSpec::default(),
            palette: Palette::default(),
            render_scale: 0.25,
            parallelism: 1,
            seed: None,
        }
    }
}

impl RunConfig {
    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut config: RunConfig = histopattern::io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.manifest,
            &mut config.annotations,
            &mut config.stats,
            &mut config.thresholds,
            &mut config.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Applies the seed to every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.augment.seed = seed;
        if let ClassifierConfig::Oracle(oracle) = &mut self.classifier {
            oracle.seed = seed;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.tiler.validate().map_err(|e| CliError::invalid(e.to_string()))?;
        self.aggregation
            .validate()
            .map_err(|e| CliError::invalid(e.to_string()))?;
        self.grid.validate().map_err(|e| CliError::invalid(e.to_string()))?;
        self.augment.validate().map_err(|e| CliError::invalid(e.to_string()))?;
        self.palette.validate().map_err(|e| CliError::invalid(e.to_string()))?;
        if self.parallelism == 0 {
            return Err(CliError::invalid("parallelism must be at least 1"));
        }
        if !(self.render_scale > 0.0 && self.render_scale <= 1.0) {
            return Err(CliError::invalid("render_scale must lie in (0, 1]"));
        }
        Ok(())
    }
}
