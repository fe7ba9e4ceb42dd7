//! Whole-slide inference: confidence filtering of patch predictions and the
//! three-step aggregation into a predominant pattern plus minors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use image::{imageops, RgbImage};
use num_rational::Ratio;
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::gateway::{GatewayError, PatchClassifier, PatchInput};
use crate::model::{HistologicPattern, PatchGeometry, PatchPrediction, SlideLabel};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("slide {slide_id}: {source}")]
    Classifier {
        slide_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("slide {slide_id}: classifier returned {got} vectors for {expected} patches")]
    LengthMismatch {
        slide_id: String,
        expected: usize,
        got: usize,
    },
    #[error("slide {slide_id}: no patches to classify")]
    NoPatches { slide_id: String },
    #[error("slide {slide_id}: patch at ({x}, {y}) side {side} lies outside the {width}x{height} image")]
    PatchOutOfBounds {
        slide_id: String,
        x: u32,
        y: u32,
        side: u32,
        width: u32,
        height: u32,
    },
    #[error("no predictions to aggregate")]
    EmptyPredictions,
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("invalid aggregation config: {0}")]
    InvalidConfig(String),
}

/// Per-class minimum confidence, canonical order, each in [0, 1].
///
/// JSON: `{"lepidic": 0.0, ..., "benign": 0.0}` with all six keys.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThresholdVector([f64; 6]);

impl ThresholdVector {
    pub fn new(tau: [f64; 6]) -> Result<Self, InferenceError> {
        for (p, v) in HistologicPattern::ALL.iter().zip(tau) {
            if !(0.0..=1.0).contains(&v) {
                return Err(InferenceError::InvalidThresholds(format!(
                    "{p} threshold {v} outside [0, 1]"
                )));
            }
        }
        Ok(ThresholdVector(tau))
    }

    pub fn zeros() -> Self {
        ThresholdVector([0.0; 6])
    }

    pub fn uniform(value: f64) -> Result<Self, InferenceError> {
        Self::new([value; 6])
    }

    pub fn get(&self, pattern: HistologicPattern) -> f64 {
        self.0[pattern.index()]
    }

    pub fn with(mut self, pattern: HistologicPattern, value: f64) -> Result<Self, InferenceError> {
        self.0[pattern.index()] = value;
        Self::new(self.0)
    }

    pub fn values(&self) -> &[f64; 6] {
        &self.0
    }
}

impl Serialize for ThresholdVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(6))?;
        for p in HistologicPattern::ALL {
            map.serialize_entry(p.name(), &self.get(p))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ThresholdVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut tau = [0.0; 6];
        for p in HistologicPattern::ALL {
            tau[p.index()] = *raw
                .get(p.name())
                .ok_or_else(|| D::Error::custom(format!("missing threshold key '{}'", p.name())))?;
        }
        if let Some(extra) = raw.keys().find(|k| crate::model::parse_pattern(k).is_err()) {
            return Err(D::Error::custom(format!("unknown threshold key '{extra}'")));
        }
        ThresholdVector::new(tau).map_err(D::Error::custom)
    }
}

/// Retained predictions per class, canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts(pub [u64; 6]);

impl ClassCounts {
    pub fn get(&self, pattern: HistologicPattern) -> u64 {
        self.0[pattern.index()]
    }

    pub fn add(&mut self, pattern: HistologicPattern) {
        self.0[pattern.index()] += 1;
    }

    pub fn retained_total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn merge(&mut self, other: &ClassCounts) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = HistologicPattern::ALL
            .iter()
            .map(|p| format!("{}={}", p.name(), self.get(*p)))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    /// Classes below this share of the retained predictions are dropped.
    pub minor_floor: Ratio<u64>,
    /// Whether benign predictions count in the denominator of the floor.
    pub benign_in_denominator: bool,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            minor_floor: Ratio::new(1, 20),
            benign_in_denominator: true,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.minor_floor >= Ratio::from_integer(1) {
            return Err(InferenceError::InvalidConfig(format!(
                "minor_floor {} must be below 1",
                self.minor_floor
            )));
        }
        Ok(())
    }
}

/// Keeps predictions whose confidence reaches the threshold of their top class.
pub fn filter_predictions(preds: &[PatchPrediction], tau: &ThresholdVector) -> (Vec<PatchPrediction>, ClassCounts) {
    let mut counts = ClassCounts::default();
    let retained: Vec<PatchPrediction> = preds
        .iter()
        .filter(|p| p.confidence() >= tau.get(p.top_class()))
        .copied()
        .inspect(|p| counts.add(p.top_class()))
        .collect();
    (retained, counts)
}

/// Counts of [`filter_predictions`] without collecting the retained list.
pub fn count_retained(preds: &[PatchPrediction], tau: &ThresholdVector) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for p in preds {
        if p.confidence() >= tau.get(p.top_class()) {
            counts.add(p.top_class());
        }
    }
    counts
}

/// Drops benign and every cancerous class under the floor, names the most
/// frequent survivor predominant (ties to the lower canonical index) and the
/// rest minors. Indeterminate when nothing survives.
pub fn aggregate(counts: &ClassCounts, config: &AggregationConfig) -> SlideLabel {
    let denominator = if config.benign_in_denominator {
        counts.retained_total()
    } else {
        counts.retained_total() - counts.get(HistologicPattern::Benign)
    };
    let floor_numer = *config.minor_floor.numer();
    let floor_denom = *config.minor_floor.denom();
    // count/denominator < numer/denom, cross-multiplied to stay exact
    let below_floor =
        |c: u64| u128::from(c) * u128::from(floor_denom) < u128::from(floor_numer) * u128::from(denominator);

    let survivors: Vec<HistologicPattern> = HistologicPattern::CANCEROUS
        .into_iter()
        .filter(|&p| counts.get(p) > 0 && !below_floor(counts.get(p)))
        .collect();

    let Some(&predominant) = survivors.iter().rev().max_by_key(|&&p| counts.get(p)) else {
        return SlideLabel::indeterminate();
    };
    let minors: BTreeSet<_> = survivors.into_iter().filter(|&p| p != predominant).collect();
    SlideLabel::new(Some(predominant), minors).expect("aggregation yields a valid label")
}

/// Stable per-slide offset for classifier draw indices, so a patch's draw does
/// not depend on batching or on which other slides are processed.
pub fn slide_draw_base(slide_id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in slide_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideInference {
    pub label: SlideLabel,
    /// Every patch prediction, in tiling order.
    pub predictions: Vec<PatchPrediction>,
    pub retained: Vec<PatchPrediction>,
    pub counts: ClassCounts,
}

/// Classifies every patch of a slide and aggregates. Batches may run in
/// parallel on the current rayon pool; results are placed by index so the
/// outcome does not depend on batch size or schedule.
pub fn classify_slide(
    slide_id: &str,
    image: &RgbImage,
    patches: &[PatchGeometry],
    classifier: &dyn PatchClassifier,
) -> Result<Vec<PatchPrediction>, InferenceError> {
    if patches.is_empty() {
        return Err(InferenceError::NoPatches {
            slide_id: slide_id.to_string(),
        });
    }
    let (width, height) = image.dimensions();
    if let Some(g) = patches.iter().find(|g| !g.fits_within(width, height)) {
        return Err(InferenceError::PatchOutOfBounds {
            slide_id: slide_id.to_string(),
            x: g.x,
            y: g.y,
            side: g.side,
            width,
            height,
        });
    }
    let base = slide_draw_base(slide_id);
    let batch = classifier.batch_size().max(1);
    let chunks: Vec<Result<Vec<PatchPrediction>, InferenceError>> = patches
        .par_chunks(batch)
        .enumerate()
        .map(|(chunk_index, chunk)| {
            let inputs: Vec<PatchInput> = chunk
                .iter()
                .enumerate()
                .map(|(i, g)| PatchInput {
                    id: base.wrapping_add((chunk_index * batch + i) as u64),
                    image: imageops::crop_imm(image, g.x, g.y, g.side, g.side).to_image(),
                })
                .collect();
            let probs = classifier
                .classify_batch(&inputs)
                .map_err(|source| InferenceError::Classifier {
                    slide_id: slide_id.to_string(),
                    source,
                })?;
            if probs.len() != chunk.len() {
                return Err(InferenceError::LengthMismatch {
                    slide_id: slide_id.to_string(),
                    expected: chunk.len(),
                    got: probs.len(),
                });
            }
            Ok(chunk
                .iter()
                .zip(probs)
                .map(|(g, p)| PatchPrediction::new(*g, p))
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(patches.len());
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// classify → filter → aggregate for one slide.
pub fn infer_slide(
    slide_id: &str,
    image: &RgbImage,
    patches: &[PatchGeometry],
    classifier: &dyn PatchClassifier,
    tau: &ThresholdVector,
    config: &AggregationConfig,
) -> Result<SlideInference, InferenceError> {
    let predictions = classify_slide(slide_id, image, patches, classifier)?;
    Ok(label_predictions(predictions, tau, config))
}

/// filter → aggregate on pre-computed predictions.
pub fn label_predictions(
    predictions: Vec<PatchPrediction>,
    tau: &ThresholdVector,
    config: &AggregationConfig,
) -> SlideInference {
    let (retained, counts) = filter_predictions(&predictions, tau);
    SlideInference {
        label: aggregate(&counts, config),
        predictions,
        retained,
        counts,
    }
}

/// Probability-averaging baseline. The mean vector over all patches (no
/// confidence filter) gives the predominant pattern as its cancerous argmax;
/// other cancerous classes with a nonzero mean that reaches their threshold
/// become minors.
/// Indeterminate when benign has the highest mean and no cancerous mean
/// reaches its threshold.
pub fn baseline_aggregate(preds: &[PatchPrediction], tau: &ThresholdVector) -> Result<SlideLabel, InferenceError> {
    if preds.is_empty() {
        return Err(InferenceError::EmptyPredictions);
    }
    // summed in sorted order so the mean is bit-identical under any patch order
    let mut mean = [0.0f64; 6];
    for (c, m) in mean.iter_mut().enumerate() {
        let mut column: Vec<f64> = preds.iter().map(|p| p.probs().values()[c]).collect();
        column.sort_by(f64::total_cmp);
        *m = column.iter().sum::<f64>() / preds.len() as f64;
    }
    Ok(baseline_from_mean(&mean, tau))
}

pub fn baseline_from_mean(mean: &[f64; 6], tau: &ThresholdVector) -> SlideLabel {
    let benign = mean[HistologicPattern::Benign.index()];
    let cancerous = HistologicPattern::CANCEROUS;
    let benign_wins = cancerous.iter().all(|p| benign > mean[p.index()]);
    let none_reach = cancerous.iter().all(|p| mean[p.index()] < tau.get(*p));
    if benign_wins && none_reach {
        return SlideLabel::indeterminate();
    }
    let mut predominant = cancerous[0];
    for p in cancerous {
        if mean[p.index()] > mean[predominant.index()] {
            predominant = p;
        }
    }
    let minors = cancerous
        .into_iter()
        .filter(|&p| p != predominant && mean[p.index()] > 0.0 && mean[p.index()] >= tau.get(p))
        .collect();
    SlideLabel::new(Some(predominant), minors).expect("baseline yields a valid label")
}
