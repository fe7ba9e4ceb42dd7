//! Training-set preparation: channel statistics, normalization, augmentation
//! and the class-balanced patch manifest.

use std::collections::BTreeMap;

use image::{imageops, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::HistologicPattern;
use crate::tiler::{balanced_stride, TileGrid, TilerError};

/// Divide guard for zero-variance channels.
pub const STD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("no patches to compute channel statistics from")]
    EmptyDataset,
    #[error("patch {index} is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("class {class}: {source}")]
    NoTilableCrops {
        class: HistologicPattern,
        #[source]
        source: TilerError,
    },
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
}

/// Per-channel RGB mean and population standard deviation, pixel values
/// scaled to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub dataset_id: String,
}

/// Mergeable running moments (Chan et al. parallel update).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChannelAccumulator {
    count: u64,
    mean: [f64; 3],
    m2: [f64; 3],
}

impl ChannelAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push_pixel(&mut self, rgb: [u8; 3]) {
        self.count += 1;
        let n = self.count as f64;
        for c in 0..3 {
            let v = f64::from(rgb[c]) / 255.0;
            let delta = v - self.mean[c];
            self.mean[c] += delta / n;
            self.m2[c] += delta * (v - self.mean[c]);
        }
    }

    /// Folds a whole patch in as one block, then merges.
    pub fn push_image(&mut self, image: &RgbImage) {
        let Some(first) = image.pixels().next() else {
            return;
        };
        // two-pass, with the mean taken relative to the first pixel so a
        // constant patch has exactly zero spread
        let shift = first.0.map(|v| f64::from(v) / 255.0);
        let mut sums = [0.0f64; 3];
        for p in image.pixels() {
            for c in 0..3 {
                sums[c] += f64::from(p.0[c]) / 255.0 - shift[c];
            }
        }
        let n = u64::from(image.width()) * u64::from(image.height());
        let mut block = ChannelAccumulator::new();
        block.count = n;
        for c in 0..3 {
            block.mean[c] = shift[c] + sums[c] / n as f64;
        }
        for p in image.pixels() {
            for c in 0..3 {
                let d = f64::from(p.0[c]) / 255.0 - block.mean[c];
                block.m2[c] += d * d;
            }
        }
        self.merge(&block);
    }

    pub fn merge(&mut self, other: &ChannelAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for c in 0..3 {
            let delta = other.mean[c] - self.mean[c];
            self.mean[c] += delta * nb / n;
            self.m2[c] += other.m2[c] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn finish(&self, dataset_id: impl Into<String>) -> Result<ChannelStats, PreprocessError> {
        if self.count == 0 {
            return Err(PreprocessError::EmptyDataset);
        }
        let n = self.count as f64;
        Ok(ChannelStats {
            mean: self.mean,
            std: self.m2.map(|m2| (m2.max(0.0) / n).sqrt()),
            dataset_id: dataset_id.into(),
        })
    }
}

/// Single pass over a patch stream. All patches must share dimensions.
pub fn dataset_channel_stats<'a, I>(patches: I, dataset_id: &str) -> Result<ChannelStats, PreprocessError>
where
    I: IntoIterator<Item = &'a RgbImage>,
{
    let mut acc = ChannelAccumulator::new();
    let mut expected = None;
    for (index, patch) in patches.into_iter().enumerate() {
        let dims = patch.dimensions();
        match expected {
            None => expected = Some(dims),
            Some(e) if e != dims => {
                return Err(PreprocessError::DimensionMismatch {
                    index,
                    expected: e,
                    found: dims,
                })
            }
            _ => {}
        }
        acc.push_image(patch);
    }
    acc.finish(dataset_id)
}

/// Real-valued HWC patch after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPatch {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl NormalizedPatch {
    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// `(v/255 - mean) / max(std, eps)` per channel.
pub fn normalize(patch: &RgbImage, stats: &ChannelStats) -> NormalizedPatch {
    let scale = stats.std.map(|s| s.max(STD_EPSILON));
    let mut data = Vec::with_capacity(patch.len());
    for p in patch.pixels() {
        for c in 0..3 {
            data.push((f64::from(p.0[c]) / 255.0 - stats.mean[c]) / scale[c]);
        }
    }
    NormalizedPatch {
        width: patch.width(),
        height: patch.height(),
        data,
    }
}

/// Inverse of [`normalize`], back to [0, 1] channel values (unclamped).
pub fn denormalize(patch: &NormalizedPatch, stats: &ChannelStats) -> Vec<f64> {
    let scale = stats.std.map(|s| s.max(STD_EPSILON));
    patch
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| v * scale[i % 3] + stats.mean[i % 3])
        .collect()
}

/// Right-angle rotation, clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rotation {
    #[serde(rename = "0")]
    R0,
    #[serde(rename = "90")]
    R90,
    #[serde(rename = "180")]
    R180,
    #[serde(rename = "270")]
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn apply(self, image: &RgbImage) -> RgbImage {
        match self {
            Rotation::R0 => image.clone(),
            Rotation::R90 => imageops::rotate90(image),
            Rotation::R180 => imageops::rotate180(image),
            Rotation::R270 => imageops::rotate270(image),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub brightness_delta: f64,
    pub contrast_delta: f64,
    pub saturation_delta: f64,
    /// Maximum hue shift as a fraction of the hue circle.
    pub hue_delta: f64,
    pub rotations: Vec<Rotation>,
    pub hflip_probability: f64,
    pub vflip_probability: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            brightness_delta: 0.2,
            contrast_delta: 0.2,
            saturation_delta: 0.2,
            hue_delta: 0.05,
            rotations: Rotation::ALL.to_vec(),
            hflip_probability: 0.5,
            vflip_probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// Everything disabled; `augment` returns its input unchanged.
    pub fn identity() -> Self {
        AugmentSpec {
            brightness_delta: 0.0,
            contrast_delta: 0.0,
            saturation_delta: 0.0,
            hue_delta: 0.0,
            rotations: vec![Rotation::R0],
            hflip_probability: 0.0,
            vflip_probability: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        for (name, v) in [
            ("brightness_delta", self.brightness_delta),
            ("contrast_delta", self.contrast_delta),
            ("saturation_delta", self.saturation_delta),
            ("hflip_probability", self.hflip_probability),
            ("vflip_probability", self.vflip_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PreprocessError::InvalidSpec(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(0.0..=0.5).contains(&self.hue_delta) {
            return Err(PreprocessError::InvalidSpec(format!(
                "hue_delta = {} outside [0, 0.5]",
                self.hue_delta
            )));
        }
        if self.rotations.is_empty() {
            return Err(PreprocessError::InvalidSpec("rotations must not be empty".into()));
        }
        Ok(())
    }
}

/// Random draws for one augmentation, fixed by `(seed, draw_index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
    pub rotation: Rotation,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentDraw {
    pub fn sample(spec: &AugmentSpec, draw_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(draw_index);
        // every draw is always taken so the stream layout does not depend on
        // which deltas are zero
        let mut symmetric = |delta: f64| delta * (2.0 * rng.gen::<f64>() - 1.0);
        let brightness = 1.0 + symmetric(spec.brightness_delta);
        let contrast = 1.0 + symmetric(spec.contrast_delta);
        let saturation = 1.0 + symmetric(spec.saturation_delta);
        let hue_shift = symmetric(spec.hue_delta);
        let rotation = spec.rotations[rng.gen_range(0..spec.rotations.len())];
        let hflip = rng.gen::<f64>() < spec.hflip_probability;
        let vflip = rng.gen::<f64>() < spec.vflip_probability;
        AugmentDraw {
            brightness,
            contrast,
            saturation,
            hue_shift,
            rotation,
            hflip,
            vflip,
        }
    }
}

fn luma(rgb: [f32; 3]) -> f32 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn color_jitter(patch: &RgbImage, draw: &AugmentDraw) -> RgbImage {
    let mut px: Vec<[f32; 3]> = patch.pixels().map(|p| p.0.map(|c| f32::from(c) / 255.0)).collect();
    let clamp = |v: f32| v.clamp(0.0, 1.0);

    if draw.brightness != 1.0 {
        let f = draw.brightness as f32;
        for p in px.iter_mut() {
            *p = p.map(|c| clamp(c * f));
        }
    }
    if draw.contrast != 1.0 {
        let f = draw.contrast as f32;
        let mean = px.iter().map(|&p| luma(p)).sum::<f32>() / px.len().max(1) as f32;
        for p in px.iter_mut() {
            *p = p.map(|c| clamp(mean + f * (c - mean)));
        }
    }
    if draw.saturation != 1.0 {
        let f = draw.saturation as f32;
        for p in px.iter_mut() {
            let gray = luma(*p);
            *p = p.map(|c| clamp(gray + f * (c - gray)));
        }
    }
    if draw.hue_shift != 0.0 {
        let shift = draw.hue_shift as f32;
        for p in px.iter_mut() {
            let [h, s, v] = rgb_to_hsv(*p);
            *p = hsv_to_rgb([h + shift, s, v]).map(clamp);
        }
    }

    let mut out = RgbImage::new(patch.width(), patch.height());
    for (dst, src) in out.pixels_mut().zip(px) {
        dst.0 = src.map(|c| (c * 255.0).round() as u8);
    }
    out
}

/// Brightness, contrast, saturation and hue jitter, then a right-angle
/// rotation, then independent horizontal and vertical flips. Deterministic in
/// `(spec.seed, draw_index)`.
pub fn augment(patch: &RgbImage, spec: &AugmentSpec, draw_index: u64) -> RgbImage {
    let draw = AugmentDraw::sample(spec, draw_index);
    apply_draw(patch, &draw)
}

pub fn apply_draw(patch: &RgbImage, draw: &AugmentDraw) -> RgbImage {
    let jittered = color_jitter(patch, draw);
    let mut out = draw.rotation.apply(&jittered);
    if draw.hflip {
        imageops::flip_horizontal_in_place(&mut out);
    }
    if draw.vflip {
        imageops::flip_vertical_in_place(&mut out);
    }
    out
}

/// Source crop for the balanced training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CropRef {
    pub crop_id: String,
    pub width: u32,
    pub height: u32,
}

/// One training patch: a window of a crop, plus which augmentation draw to
/// apply (0 = the raw patch).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub class: HistologicPattern,
    pub crop_id: String,
    pub x: u32,
    pub y: u32,
    pub side: u32,
    pub draw_index: u64,
}

/// Tiles each class at its own balanced stride and pads with augmented
/// duplicates so every class has exactly `target_per_class` entries. Classes
/// with more raw patches than the target are subsampled with a seeded shuffle.
pub fn build_balanced_training_set(
    crops_by_class: &BTreeMap<HistologicPattern, Vec<CropRef>>,
    window: u32,
    target_per_class: usize,
    spec: &AugmentSpec,
) -> Result<Vec<ManifestEntry>, PreprocessError> {
    let mut manifest = Vec::with_capacity(crops_by_class.len() * target_per_class);
    for (&class, crops) in crops_by_class {
        let dims: Vec<(u32, u32)> = crops.iter().map(|c| (c.width, c.height)).collect();
        let stride = balanced_stride(&dims, window, target_per_class as u64)
            .map_err(|source| PreprocessError::NoTilableCrops { class, source })?;
        let grid = TileGrid {
            window,
            stride,
            clamp_final: false,
        };
        let mut raw: Vec<ManifestEntry> = crops
            .iter()
            .flat_map(|crop| {
                grid.tiles(crop.width, crop.height)
                    .into_iter()
                    .map(move |g| ManifestEntry {
                        class,
                        crop_id: crop.crop_id.clone(),
                        x: g.x,
                        y: g.y,
                        side: g.side,
                        draw_index: 0,
                    })
            })
            .collect();

        if raw.len() > target_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(class.index() as u64);
            let mut keep: Vec<usize> = (0..raw.len()).collect();
            keep.shuffle(&mut rng);
            keep.truncate(target_per_class);
            keep.sort_unstable();
            raw = keep.into_iter().map(|i| raw[i].clone()).collect();
        }

        let base = raw.len();
        for k in 0..target_per_class - base {
            let mut dup = raw[k % base].clone();
            dup.draw_index = 1 + (k / base) as u64;
            raw.push(dup);
        }
        manifest.extend(raw);
    }
    Ok(manifest)
}
