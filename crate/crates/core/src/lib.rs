//! Histologic pattern classification of whole-slide images: tiling,
//! preprocessing, patch classification through a pluggable gateway,
//! thresholded aggregation into slide labels, threshold calibration,
//! agreement statistics, overlays and synthetic test slides.

pub mod calibration;
pub mod gateway;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod synth;
pub mod tiler;
pub mod visualizer;

pub use inference::{AggregationConfig, ClassCounts, ThresholdVector};
pub use model::{
    normalize_slide_label, parse_pattern, AnnotationCrop, HistologicPattern, ModelError, PatchGeometry,
    PatchPrediction, ProbabilityVector, Rect, SlideLabel, DEFAULT_WINDOW,
};
pub use tiler::TilerConfig;
