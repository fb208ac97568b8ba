//! Post-processing and benchmarking toolkit for open-world object detection.
//!
//! The crate covers the non-neural side of an unknown-aware detection stack:
//!
//! 1. **geometry** – exact axis-aligned box arithmetic, including the
//!    occupancy target (fraction of a predicted box covered by ground-truth
//!    objects) in both exact and upper-bound form.
//! 2. **scoring** – the occupancy BCE loss/gradient and the inference-time
//!    filtering cascade: score filter, OOD recall enhancement, and the
//!    per-image detection budget.
//! 3. **depth** – depth-based false-positive reduction: grayscale closing,
//!    vertical Sobel depth-change map, per-box flatness proportion and the
//!    accept/reject decision.
//! 4. **mask2box** – converts binary masks and per-pixel anomaly score maps
//!    into scored box detections via connected components.
//! 5. **metrics** – greedy IoU matching, recall@k over unknowns, per-mille
//!    FPR@k inside a region-of-interest mask, and COCO-style average
//!    precision over known classes.
//! 6. **augment** – four-tile mosaic composition drawing from two datasets,
//!    mixup blending, and label-space remapping onto the known classes plus
//!    an OOD class.
//! 7. **synth** – deterministic synthetic scenes (ramp depth, protruding
//!    objects, flat "ghost" textures) and brute-force oracles backing the
//!    property tests.
//! 8. **formats** / **pipeline** – the file interchange formats, the
//!    filter→depth-filter→evaluate pipeline, and the runtime measurement
//!    protocol used by the CLI.

pub mod augment;
pub mod depth;
pub mod formats;
pub mod geometry;
pub mod mask2box;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scoring;
pub mod synth;

pub use geometry::{BoundingBox, BoxSet};
pub use raster::{BinaryMask, DepthChangeMap, DepthMap, Raster, ScoreMap};
pub use scoring::{Detection, FilterConfig, Label, Provenance};
