//! Domain types shared by every stage of the pipeline.
//!
//! The six patch classes have one global order (lepidic, acinar, papillary,
//! micropapillary, solid, benign). CSV columns, probability vectors and every
//! tie-break use it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Tolerance on the sum of a probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Default patch side in pixels.
pub const DEFAULT_WINDOW: u32 = 224;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unknown histologic pattern '{0}'")]
    UnknownPattern(String),
    #[error("invalid slide label: {0}")]
    InvalidLabel(String),
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("invalid patch geometry: {0}")]
    InvalidGeometry(String),
}

/// One of the five growth patterns of lung adenocarcinoma, or benign tissue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HistologicPattern {
    Lepidic,
    Acinar,
    Papillary,
    Micropapillary,
    Solid,
    Benign,
}

impl HistologicPattern {
    pub const COUNT: usize = 6;

    /// All classes in canonical order.
    pub const ALL: [HistologicPattern; 6] = [
        HistologicPattern::Lepidic,
        HistologicPattern::Acinar,
        HistologicPattern::Papillary,
        HistologicPattern::Micropapillary,
        HistologicPattern::Solid,
        HistologicPattern::Benign,
    ];

    /// The five cancerous classes in canonical order.
    pub const CANCEROUS: [HistologicPattern; 5] = [
        HistologicPattern::Lepidic,
        HistologicPattern::Acinar,
        HistologicPattern::Papillary,
        HistologicPattern::Micropapillary,
        HistologicPattern::Solid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn is_cancerous(self) -> bool {
        self != HistologicPattern::Benign
    }

    /// Lowercase canonical name, used in every file format.
    pub fn name(self) -> &'static str {
        match self {
            HistologicPattern::Lepidic => "lepidic",
            HistologicPattern::Acinar => "acinar",
            HistologicPattern::Papillary => "papillary",
            HistologicPattern::Micropapillary => "micropapillary",
            HistologicPattern::Solid => "solid",
            HistologicPattern::Benign => "benign",
        }
    }
}

/// Case-insensitive lookup of a canonical class name.
pub fn parse_pattern(name: &str) -> Result<HistologicPattern, ModelError> {
    let trimmed = name.trim();
    HistologicPattern::ALL
        .iter()
        .copied()
        .find(|p| p.name().eq_ignore_ascii_case(trimmed))
        .ok_or_else(|| ModelError::UnknownPattern(name.to_string()))
}

impl FromStr for HistologicPattern {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pattern(s)
    }
}

impl fmt::Display for HistologicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for HistologicPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for HistologicPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_pattern(&s).map_err(serde::de::Error::custom)
    }
}

/// Six class probabilities in canonical order, each in [0, 1], summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector([f64; 6]);

impl ProbabilityVector {
    pub fn new(values: [f64; 6]) -> Result<Self, ModelError> {
        for (pattern, &v) in HistologicPattern::ALL.iter().zip(values.iter()) {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(ModelError::InvalidProbabilities(format!(
                    "component {pattern} = {v} is outside [0, 1]"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(ModelError::InvalidProbabilities(format!(
                "components sum to {sum}, expected 1"
            )));
        }
        Ok(ProbabilityVector(values))
    }

    /// Validates like [`ProbabilityVector::new`] and then divides out the
    /// residual. Vectors already within a few ulps of summing to 1 are kept
    /// bit-for-bit, since dividing cannot bring them closer.
    pub fn renormalized(values: [f64; 6]) -> Result<Self, ModelError> {
        let checked = Self::new(values)?;
        let sum: f64 = checked.0.iter().sum();
        if (sum - 1.0).abs() <= 8.0 * f64::EPSILON {
            return Ok(checked);
        }
        let mut out = checked.0;
        for v in out.iter_mut() {
            *v = (*v / sum).min(1.0);
        }
        Ok(ProbabilityVector(out))
    }

    /// All mass on one class.
    pub fn one_hot(pattern: HistologicPattern) -> Self {
        let mut values = [0.0; 6];
        values[pattern.index()] = 1.0;
        ProbabilityVector(values)
    }

    pub fn values(&self) -> &[f64; 6] {
        &self.0
    }

    pub fn get(&self, pattern: HistologicPattern) -> f64 {
        self.0[pattern.index()]
    }

    /// Highest-probability class; equal probabilities resolve to the lower
    /// canonical index.
    pub fn argmax(&self) -> HistologicPattern {
        let mut best = 0;
        for i in 1..6 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        HistologicPattern::ALL[best]
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = ModelError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; 6] = values
            .as_slice()
            .try_into()
            .map_err(|_| ModelError::InvalidProbabilities(format!("expected 6 components, got {}", values.len())))?;
        ProbabilityVector::new(arr)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0.to_vec()
    }
}

/// A square patch window, top-left corner plus side, in slide pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

impl PatchGeometry {
    pub fn new(x: u32, y: u32, side: u32) -> Result<Self, ModelError> {
        if side == 0 {
            return Err(ModelError::InvalidGeometry("side must be positive".into()));
        }
        Ok(PatchGeometry { x, y, side })
    }

    /// Whether the window lies fully within a `width` x `height` region.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.side > 0
            && u64::from(self.x) + u64::from(self.side) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.side) <= u64::from(height)
    }

    pub fn center(&self) -> (f64, f64) {
        let half = f64::from(self.side) / 2.0;
        (f64::from(self.x) + half, f64::from(self.y) + half)
    }
}

/// A classified patch. `top_class` and `confidence` are always derived from
/// `probs`, so they cannot disagree with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PatchPredictionRepr", into = "PatchPredictionRepr")]
pub struct PatchPrediction {
    geometry: PatchGeometry,
    probs: ProbabilityVector,
    top_class: HistologicPattern,
    confidence: f64,
}

impl PatchPrediction {
    pub fn new(geometry: PatchGeometry, probs: ProbabilityVector) -> Self {
        let top_class = probs.argmax();
        PatchPrediction {
            geometry,
            probs,
            top_class,
            confidence: probs.get(top_class),
        }
    }

    pub fn geometry(&self) -> PatchGeometry {
        self.geometry
    }

    pub fn probs(&self) -> &ProbabilityVector {
        &self.probs
    }

    pub fn top_class(&self) -> HistologicPattern {
        self.top_class
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

#[derive(Serialize, Deserialize)]
struct PatchPredictionRepr {
    geometry: PatchGeometry,
    probs: ProbabilityVector,
}

impl From<PatchPredictionRepr> for PatchPrediction {
    fn from(r: PatchPredictionRepr) -> Self {
        PatchPrediction::new(r.geometry, r.probs)
    }
}

impl From<PatchPrediction> for PatchPredictionRepr {
    fn from(p: PatchPrediction) -> Self {
        PatchPredictionRepr {
            geometry: p.geometry,
            probs: p.probs,
        }
    }
}

/// Whole-slide label: a cancerous predominant pattern with cancerous minors,
/// or Indeterminate (`predominant == None`, no minors).
///
/// JSON: `{"predominant": "acinar" | null, "minors": ["lepidic", ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "SlideLabelRepr", into = "SlideLabelRepr")]
pub struct SlideLabel {
    predominant: Option<HistologicPattern>,
    minors: BTreeSet<HistologicPattern>,
}

impl SlideLabel {
    pub fn indeterminate() -> Self {
        SlideLabel::default()
    }

    /// Strict constructor: rejects anything that violates the label invariants.
    pub fn new(
        predominant: Option<HistologicPattern>,
        minors: BTreeSet<HistologicPattern>,
    ) -> Result<Self, ModelError> {
        match predominant {
            None if !minors.is_empty() => {
                return Err(ModelError::InvalidLabel(
                    "an indeterminate label cannot carry minor patterns".into(),
                ))
            }
            Some(p) if !p.is_cancerous() => {
                return Err(ModelError::InvalidLabel(
                    "the predominant pattern must be cancerous".into(),
                ))
            }
            Some(p) if minors.contains(&p) => {
                return Err(ModelError::InvalidLabel(format!(
                    "{p} is listed as both predominant and minor"
                )))
            }
            _ => {}
        }
        if minors.contains(&HistologicPattern::Benign) {
            return Err(ModelError::InvalidLabel("benign cannot be a minor pattern".into()));
        }
        Ok(SlideLabel { predominant, minors })
    }

    pub fn predominant(&self) -> Option<HistologicPattern> {
        self.predominant
    }

    pub fn minors(&self) -> &BTreeSet<HistologicPattern> {
        &self.minors
    }

    pub fn is_indeterminate(&self) -> bool {
        self.predominant.is_none()
    }

    /// Whether the pattern appears at all, as predominant or minor.
    pub fn contains(&self, pattern: HistologicPattern) -> bool {
        self.predominant == Some(pattern) || self.minors.contains(&pattern)
    }

    /// `{predominant} ∪ minors`; empty for Indeterminate.
    pub fn label_set(&self) -> BTreeSet<HistologicPattern> {
        let mut set = self.minors.clone();
        if let Some(p) = self.predominant {
            set.insert(p);
        }
        set
    }
}

/// Builds a label from loosely specified parts: the predominant pattern and
/// benign are removed from the minors. Benign as predominant is an error.
pub fn normalize_slide_label<I>(predominant: Option<HistologicPattern>, minors: I) -> Result<SlideLabel, ModelError>
where
    I: IntoIterator<Item = HistologicPattern>,
{
    if predominant == Some(HistologicPattern::Benign) {
        return Err(ModelError::InvalidLabel(
            "benign cannot be the predominant pattern".into(),
        ));
    }
    let minors: BTreeSet<_> = match predominant {
        None => BTreeSet::new(),
        Some(p) => minors.into_iter().filter(|&m| m != p && m.is_cancerous()).collect(),
    };
    SlideLabel::new(predominant, minors)
}

impl fmt::Display for SlideLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.predominant {
            None => f.write_str("indeterminate"),
            Some(p) => {
                write!(f, "{p}")?;
                if !self.minors.is_empty() {
                    let minors: Vec<_> = self.minors.iter().map(|m| m.name()).collect();
                    write!(f, " [{}]", minors.join(", "))?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SlideLabelRepr {
    predominant: Option<HistologicPattern>,
    #[serde(default)]
    minors: Vec<HistologicPattern>,
}

impl TryFrom<SlideLabelRepr> for SlideLabel {
    type Error = ModelError;

    fn try_from(r: SlideLabelRepr) -> Result<Self, Self::Error> {
        let minors: BTreeSet<_> = r.minors.iter().copied().collect();
        if minors.len() != r.minors.len() {
            return Err(ModelError::InvalidLabel("duplicate minor pattern".into()));
        }
        SlideLabel::new(r.predominant, minors)
    }
}

impl From<SlideLabel> for SlideLabelRepr {
    fn from(l: SlideLabel) -> Self {
        SlideLabelRepr {
            predominant: l.predominant,
            minors: l.minors.into_iter().collect(),
        }
    }
}

/// Axis-aligned rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        u64::from(self.x) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.height) <= u64::from(height)
    }
}

/// A pathologist-annotated region of a training slide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationCrop {
    pub slide_id: String,
    pub rect: Rect,
    pub label: HistologicPattern,
}

impl AnnotationCrop {
    pub fn new(slide_id: impl Into<String>, rect: Rect, label: HistologicPattern) -> Result<Self, ModelError> {
        if rect.width == 0 || rect.height == 0 {
            return Err(ModelError::InvalidGeometry(
                "annotation crops need positive width and height".into(),
            ));
        }
        Ok(AnnotationCrop {
            slide_id: slide_id.into(),
            rect,
            label,
        })
    }
}
