//! Synthetic slides with known composition, painted in the oracle
//! classifier's class colors so the pipeline can be checked end to end.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::ClassColorMap;
use crate::inference::{aggregate, AggregationConfig, ClassCounts};
use crate::model::{HistologicPattern, PatchGeometry, Rect, SlideLabel};
use crate::tiler::{tile_region, TilerConfig, TilerError};

/// Per-channel noise amplitude in intensity levels.
pub const NOISE_AMPLITUDE: i16 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("region {index} does not fit in the {width}x{height} slide")]
    RegionOutOfBounds { index: usize, width: u32, height: u32 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Tiler(#[from] TilerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRegion {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub label: HistologicPattern,
}

impl SyntheticRegion {
    pub fn rect(&self) -> Rect {
        Rect {
            x: self.x,
            y: self.y,
            width: self.width,
            height: self.height,
        }
    }
}

/// Slide layout. Everything starts benign; regions are painted in order, so
/// later ones cover earlier ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub regions: Vec<SyntheticRegion>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::InvalidSpec("width and height must be positive".into()));
        }
        for (index, r) in self.regions.iter().enumerate() {
            if !r.rect().fits_within(self.width, self.height) {
                return Err(SynthError::RegionOutOfBounds {
                    index,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

/// Per-pixel class indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub width: u32,
    pub height: u32,
    cells: Vec<u8>,
}

impl ClassMap {
    pub fn paint(spec: &SyntheticSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        let (w, h) = (spec.width as usize, spec.height as usize);
        let mut cells = vec![HistologicPattern::Benign.index() as u8; w * h];
        for r in &spec.regions {
            let idx = r.label.index() as u8;
            for y in r.y as usize..(r.y + r.height) as usize {
                cells[y * w + r.x as usize..y * w + (r.x + r.width) as usize].fill(idx);
            }
        }
        Ok(ClassMap {
            width: spec.width,
            height: spec.height,
            cells,
        })
    }

    pub fn get(&self, x: u32, y: u32) -> HistologicPattern {
        HistologicPattern::ALL[self.cells[y as usize * self.width as usize + x as usize] as usize]
    }

    /// Class covering most pixels of the patch; ties go to the lower index.
    /// The patch must lie within the map.
    pub fn majority(&self, patch: &PatchGeometry) -> HistologicPattern {
        let mut votes = [0u64; 6];
        let w = self.width as usize;
        for y in patch.y as usize..(patch.y + patch.side) as usize {
            for &c in &self.cells[y * w + patch.x as usize..y * w + (patch.x + patch.side) as usize] {
                votes[c as usize] += 1;
            }
        }
        let mut best = 0;
        for i in 1..6 {
            if votes[i] > votes[best] {
                best = i;
            }
        }
        HistologicPattern::ALL[best]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSlide {
    pub image: RgbImage,
    pub classes: ClassMap,
}

impl SyntheticSlide {
    pub fn ground_truth(&self, patch: &PatchGeometry) -> HistologicPattern {
        self.classes.majority(patch)
    }
}

/// Paints each class in its flat color plus seeded uniform noise in
/// `[-2, 2]` per channel.
pub fn generate_slide(spec: &SyntheticSpec, colors: &ClassColorMap) -> Result<SyntheticSlide, SynthError> {
    let classes = ClassMap::paint(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut image = RgbImage::new(spec.width, spec.height);
    for (x, y, px) in image.enumerate_pixels_mut() {
        let base = colors.color(classes.get(x, y));
        let mut out = [0u8; 3];
        for k in 0..3 {
            let noise: i16 = rng.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
            out[k] = (i16::from(base[k]) + noise).clamp(0, 255) as u8;
        }
        *px = Rgb(out);
    }
    Ok(SyntheticSlide { image, classes })
}

/// Ground-truth label of every tiled patch, in tiling order.
pub fn ground_truth_patches(
    spec: &SyntheticSpec,
    tiler: &TilerConfig,
) -> Result<Vec<(PatchGeometry, HistologicPattern)>, SynthError> {
    let classes = ClassMap::paint(spec)?;
    let tiles = tile_region(spec.width, spec.height, tiler)?;
    Ok(tiles.par_iter().map(|t| (*t, classes.majority(t))).collect())
}

/// The label a noise-free classifier with zero thresholds should produce.
pub fn expected_slide_label(
    spec: &SyntheticSpec,
    tiler: &TilerConfig,
    config: &AggregationConfig,
) -> Result<SlideLabel, SynthError> {
    let mut counts = ClassCounts::default();
    for (_, class) in ground_truth_patches(spec, tiler)? {
        counts.add(class);
    }
    Ok(aggregate(&counts, config))
}

/// `x,y,side,label` rows for the tiled patches.
pub fn ground_truth_csv(patches: &[(PatchGeometry, HistologicPattern)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "side", "label"]).expect("in-memory write");
    for (g, class) in patches {
        w.write_record([
            g.x.to_string(),
            g.y.to_string(),
            g.side.to_string(),
            class.name().to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
