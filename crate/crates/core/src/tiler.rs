//! Sliding-window patch coordinates for crops and whole slides.

use image::RgbImage;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PatchGeometry, DEFAULT_WINDOW};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TilerError {
    #[error("region {width}x{height} is smaller than the {window}px window")]
    RegionTooSmall { width: u32, height: u32, window: u32 },
    #[error("no crop is large enough for a {window}px window")]
    NoTilableCrops { window: u32 },
    #[error("invalid tiler configuration: {0}")]
    InvalidConfig(String),
}

/// Sliding-window settings. Stride is derived from the overlap fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilerConfig {
    pub window: u32,
    /// Fraction of the window shared by neighbouring patches, in [0, 1).
    pub overlap_fraction: Ratio<u32>,
    /// Shift the last window on each axis so it touches the far edge.
    pub clamp_final: bool,
    /// Skip patches whose mean luminance (0..1) exceeds this value. Off by default.
    pub background_cutoff: Option<f64>,
}

impl Default for TilerConfig {
    fn default() -> Self {
        TilerConfig {
            window: DEFAULT_WINDOW,
            overlap_fraction: Ratio::new(1, 5),
            clamp_final: true,
            background_cutoff: None,
        }
    }
}

impl TilerConfig {
    pub fn new(window: u32, overlap_fraction: Ratio<u32>) -> Result<Self, TilerError> {
        let config = TilerConfig {
            window,
            overlap_fraction,
            ..TilerConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), TilerError> {
        if self.window == 0 {
            return Err(TilerError::InvalidConfig("window must be at least 1px".into()));
        }
        if self.overlap_fraction >= Ratio::from_integer(1) {
            return Err(TilerError::InvalidConfig(format!(
                "overlap fraction {} must be below 1",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        stride_for_overlap(self.window, self.overlap_fraction)
    }

    pub fn grid(&self) -> TileGrid {
        TileGrid {
            window: self.window,
            stride: self.stride(),
            clamp_final: self.clamp_final,
        }
    }
}

/// `round(window * (1 - overlap))`, at least 1. Computed in integers, halves
/// round up.
pub fn stride_for_overlap(window: u32, overlap_fraction: Ratio<u32>) -> u32 {
    let numer = u64::from(*overlap_fraction.numer());
    let denom = u64::from(*overlap_fraction.denom());
    let keep = denom.saturating_sub(numer);
    let scaled = u64::from(window) * keep;
    let rounded = (2 * scaled + denom) / (2 * denom);
    rounded.clamp(1, u64::from(window.max(1))) as u32
}

/// Concrete window/stride pair used to enumerate positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub window: u32,
    pub stride: u32,
    pub clamp_final: bool,
}

impl TileGrid {
    /// Window origins along one axis of length `extent`.
    pub fn axis_positions(&self, extent: u32) -> Vec<u32> {
        if extent < self.window || self.window == 0 {
            return Vec::new();
        }
        let stride = self.stride.max(1);
        let last_regular = extent - self.window;
        let mut positions: Vec<u32> = (0..=last_regular).step_by(stride as usize).collect();
        if self.clamp_final && *positions.last().unwrap() != last_regular {
            positions.push(last_regular);
        }
        positions
    }

    pub fn axis_count(&self, extent: u32) -> u64 {
        if extent < self.window || self.window == 0 {
            return 0;
        }
        let stride = u64::from(self.stride.max(1));
        let span = u64::from(extent - self.window);
        let regular = span / stride + 1;
        if self.clamp_final && span % stride != 0 {
            regular + 1
        } else {
            regular
        }
    }

    /// Row-major windows over a `width` x `height` region, or empty when the
    /// region is smaller than the window.
    pub fn tiles(&self, width: u32, height: u32) -> Vec<PatchGeometry> {
        let xs = self.axis_positions(width);
        let ys = self.axis_positions(height);
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &y in &ys {
            for &x in &xs {
                out.push(PatchGeometry {
                    x,
                    y,
                    side: self.window,
                });
            }
        }
        out
    }

    pub fn count(&self, width: u32, height: u32) -> u64 {
        self.axis_count(width) * self.axis_count(height)
    }
}

fn check_region(width: u32, height: u32, window: u32) -> Result<(), TilerError> {
    if width < window || height < window {
        return Err(TilerError::RegionTooSmall { width, height, window });
    }
    Ok(())
}

/// Row-major, duplicate-free patch windows covering a region.
pub fn tile_region(width: u32, height: u32, config: &TilerConfig) -> Result<Vec<PatchGeometry>, TilerError> {
    config.validate()?;
    check_region(width, height, config.window)?;
    Ok(config.grid().tiles(width, height))
}

/// Number of windows [`tile_region`] would emit, without materializing them.
pub fn expected_patch_count(width: u32, height: u32, config: &TilerConfig) -> Result<u64, TilerError> {
    config.validate()?;
    check_region(width, height, config.window)?;
    Ok(config.grid().count(width, height))
}

/// Largest stride in `[1, window]` whose unclamped tiling of all crops yields
/// at least `target_count` patches. Crops smaller than the window contribute
/// nothing. Returns 1 when even stride 1 falls short.
pub fn balanced_stride(crop_dims: &[(u32, u32)], window: u32, target_count: u64) -> Result<u32, TilerError> {
    if window == 0 {
        return Err(TilerError::InvalidConfig("window must be at least 1px".into()));
    }
    let tilable: Vec<(u32, u32)> = crop_dims
        .iter()
        .copied()
        .filter(|&(w, h)| w >= window && h >= window)
        .collect();
    if tilable.is_empty() {
        return Err(TilerError::NoTilableCrops { window });
    }
    let total = |stride: u32| -> u64 {
        let grid = TileGrid {
            window,
            stride,
            clamp_final: false,
        };
        tilable.iter().map(|&(w, h)| grid.count(w, h)).sum()
    };
    // patch count is non-increasing in stride, so binary search for the
    // last stride that still reaches the target
    if total(window) >= target_count {
        return Ok(window);
    }
    if total(1) < target_count {
        return Ok(1);
    }
    let (mut ok, mut short) = (1u32, window);
    while short - ok > 1 {
        let mid = ok + (short - ok) / 2;
        if total(mid) >= target_count {
            ok = mid;
        } else {
            short = mid;
        }
    }
    Ok(ok)
}

/// Mean Rec.601 luminance of a patch in [0, 1].
pub fn mean_luminance(image: &RgbImage, patch: &PatchGeometry) -> f64 {
    let mut acc = 0.0;
    for y in patch.y..patch.y + patch.side {
        for x in patch.x..patch.x + patch.side {
            let [r, g, b] = image.get_pixel(x, y).0;
            acc += 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
        }
    }
    acc / (f64::from(patch.side) * f64::from(patch.side) * 255.0)
}

/// Applies `config.background_cutoff`, if set, dropping bright (glass) patches.
pub fn skip_background(image: &RgbImage, patches: Vec<PatchGeometry>, config: &TilerConfig) -> Vec<PatchGeometry> {
    match config.background_cutoff {
        None => patches,
        Some(cutoff) => patches
            .into_iter()
            .filter(|p| mean_luminance(image, p) <= cutoff)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(window: u32, stride: u32, clamp_final: bool) -> TileGrid {
        TileGrid {
            window,
            stride,
            clamp_final,
        }
    }

    fn xy(patches: &[PatchGeometry]) -> Vec<(u32, u32)> {
        patches.iter().map(|p| (p.x, p.y)).collect()
    }

    #[test]
    fn stride_from_overlap() {
        assert_eq!(stride_for_overlap(224, Ratio::new(1, 5)), 179);
        assert_eq!(stride_for_overlap(224, Ratio::new(0, 1)), 224);
        assert_eq!(stride_for_overlap(100, Ratio::new(1, 2)), 50);
        assert_eq!(stride_for_overlap(1, Ratio::new(9, 10)), 1);
        assert_eq!(TilerConfig::default().stride(), 179);
    }

    #[test]
    fn tile_region_examples() {
        let c = TilerConfig::default();
        assert_eq!(xy(&tile_region(224, 224, &c).unwrap()), vec![(0, 0)]);
        assert_eq!(xy(&tile_region(403, 224, &c).unwrap()), vec![(0, 0), (179, 0)]);
        assert_eq!(xy(&tile_region(400, 224, &c).unwrap()), vec![(0, 0), (176, 0)]);
        assert_eq!(
            tile_region(223, 500, &c),
            Err(TilerError::RegionTooSmall {
                width: 223,
                height: 500,
                window: 224
            })
        );
    }

    #[test]
    fn unclamped_grid_leaves_remainder() {
        assert_eq!(config(224, 179, false).axis_positions(400), vec![0]);
        assert_eq!(config(224, 179, true).axis_positions(400), vec![0, 176]);
    }

    #[test]
    fn expected_count_examples() {
        let c = TilerConfig::default();
        assert_eq!(expected_patch_count(224, 224, &c).unwrap(), 1);
        assert_eq!(expected_patch_count(403, 403, &c).unwrap(), 4);
    }

    #[test]
    fn balanced_stride_examples() {
        assert_eq!(balanced_stride(&[(448, 448)], 224, 4).unwrap(), 224);
        assert_eq!(balanced_stride(&[(448, 448)], 224, 9).unwrap(), 112);
        assert_eq!(
            balanced_stride(&[(200, 200)], 224, 1),
            Err(TilerError::NoTilableCrops { window: 224 })
        );
        // unreachable target falls back to stride 1
        assert_eq!(balanced_stride(&[(230, 224)], 224, 1_000).unwrap(), 1);
        // too-small crops are skipped, not fatal
        assert_eq!(balanced_stride(&[(100, 100), (448, 448)], 224, 4).unwrap(), 224);
    }

    #[test]
    fn balanced_stride_matches_linear_scan() {
        let crops = [(500, 300), (224, 700), (100, 900), (640, 480)];
        for target in [1u64, 5, 17, 40, 123, 800] {
            let got = balanced_stride(&crops, 64, target).unwrap();
            let expected = (1..=64u32)
                .rev()
                .find(|&s| {
                    crops
                        .iter()
                        .map(|&(w, h)| config(64, s, false).tiles(w, h).len() as u64)
                        .sum::<u64>()
                        >= target
                })
                .unwrap_or(1);
            assert_eq!(got, expected, "target {target}");
        }
    }

    #[test]
    fn background_skip_is_opt_in() {
        let mut img = RgbImage::from_pixel(64, 32, image::Rgb([250, 250, 250]));
        for y in 0..32 {
            for x in 0..32 {
                img.put_pixel(x, y, image::Rgb([90, 40, 120]));
            }
        }
        let c = TilerConfig {
            window: 32,
            overlap_fraction: Ratio::new(0, 1),
            ..TilerConfig::default()
        };
        let patches = tile_region(64, 32, &c).unwrap();
        assert_eq!(skip_background(&img, patches.clone(), &c).len(), 2);
        let c = TilerConfig {
            background_cutoff: Some(0.9),
            ..c
        };
        assert_eq!(xy(&skip_background(&img, patches, &c)), vec![(0, 0)]);
    }

    proptest! {
        #[test]
        fn grid_invariants(window in 1u32..64, stride_off in 0u32..64, extra_w in 0u32..300, extra_h in 0u32..300) {
            let stride = 1 + stride_off % window;
            let (w, h) = (window + extra_w, window + extra_h);
            let grid = config(window, stride, true);
            let tiles = grid.tiles(w, h);
            prop_assert_eq!(tiles.len() as u64, grid.count(w, h));

            // row-major and duplicate-free
            for pair in tiles.windows(2) {
                prop_assert!((pair[0].y, pair[0].x) < (pair[1].y, pair[1].x));
            }
            for axis in [grid.axis_positions(w), grid.axis_positions(h)] {
                // coverage: windows touch both ends and leave no gaps
                prop_assert_eq!(axis[0], 0);
                for pair in axis.windows(2) {
                    let overlap = pair[0] + window - pair[1];
                    prop_assert!(overlap >= window - stride);
                    prop_assert!(pair[1] > pair[0]);
                }
                let n = axis.len();
                for pair in axis[..n.saturating_sub(1)].windows(2) {
                    prop_assert_eq!(pair[1] - pair[0], stride);
                }
            }
            prop_assert_eq!(*grid.axis_positions(w).last().unwrap() + window, w);
            prop_assert_eq!(*grid.axis_positions(h).last().unwrap() + window, h);
        }

        #[test]
        fn smaller_stride_never_fewer_patches(window in 1u32..64, s in 1u32..64, w in 0u32..400, h in 0u32..400, clamp: bool) {
            let s = 1 + (s - 1) % window;
            if s > 1 {
                prop_assert!(config(window, s - 1, clamp).count(w, h) >= config(window, s, clamp).count(w, h));
            }
        }
    }
}
