//! Conversion of dense per-pixel maps into box detections.
//!
//! Binary semantic masks become boxes through 8-connected component
//! labeling. Anomaly score maps become scored detections by thresholding at
//! several levels and emitting one OOD detection per blob, scored with the
//! threshold that produced it — the lowest anomaly confidence over the blob.
//! Lower thresholds mark more of the image as anomalous and so produce
//! larger boxes; results from all thresholds are concatenated without
//! cross-threshold suppression (the downstream detection budget handles the
//! redundancy).

use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::raster::{BinaryMask, Raster, ScoreMap};
use crate::scoring::{Detection, Label, Provenance};

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("cannot derive a box from an empty component")]
    EmptyComponent,
    #[error("threshold list must not be empty")]
    NoThresholds,
}

/// Pixels of one connected region, in row-major discovery order; the first
/// entry is the component's top-left-most pixel.
pub type Component = Vec<(usize, usize)>;

/// Mask of pixels whose score is at or above the threshold.
pub fn threshold_binarize(s: &ScoreMap, t: f32) -> BinaryMask {
    Raster::from_fn(s.width(), s.height(), |x, y| s.get(x, y) >= t)
}

/// Partitions the true pixels into 8-connected components.
///
/// Components are ordered by their top-left-most pixel (row-major scan
/// order), so the output is deterministic.
pub fn connected_components(m: &BinaryMask) -> Vec<Component> {
    let (w, h) = (m.width(), m.height());
    let mut visited = vec![false; w * h];
    let mut components = Vec::new();
    let mut stack: Vec<(usize, usize)> = Vec::new();

    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) || visited[y * w + x] {
                continue;
            }
            let mut component = Vec::new();
            visited[y * w + x] = true;
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                component.push((cx, cy));
                let x_lo = cx.saturating_sub(1);
                let y_lo = cy.saturating_sub(1);
                for ny in y_lo..=(cy + 1).min(h - 1) {
                    for nx in x_lo..=(cx + 1).min(w - 1) {
                        let idx = ny * w + nx;
                        if m.get(nx, ny) && !visited[idx] {
                            visited[idx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            components.push(component);
        }
    }
    components
}

/// Tight box over a component's pixels, using inclusive pixel extents:
/// a pixel at `(x, y)` occupies `[x, x+1) x [y, y+1)`.
pub fn component_to_box(comp: &Component) -> Result<BoundingBox, MaskError> {
    if comp.is_empty() {
        return Err(MaskError::EmptyComponent);
    }
    let (mut min_x, mut min_y) = (usize::MAX, usize::MAX);
    let (mut max_x, mut max_y) = (0usize, 0usize);
    for &(x, y) in comp {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    Ok(BoundingBox {
        x1: min_x as f64,
        y1: min_y as f64,
        x2: (max_x + 1) as f64,
        y2: (max_y + 1) as f64,
    })
}

/// Blob extraction over a threshold grid: for each threshold, binarize,
/// label components, and emit one OOD detection per blob with the threshold
/// as its score. All thresholds' detections are concatenated.
pub fn multi_threshold_boxes(
    s: &ScoreMap,
    thresholds: &[f32],
) -> Result<Vec<Detection>, MaskError> {
    if thresholds.is_empty() {
        return Err(MaskError::NoThresholds);
    }
    let mut dets = Vec::new();
    for &t in thresholds {
        let mask = threshold_binarize(s, t);
        for comp in connected_components(&mask) {
            let bbox = component_to_box(&comp).expect("components are non-empty");
            dets.push(Detection {
                bbox,
                class_scores: Vec::new(),
                sco: t as f64,
                occ: t as f64,
                label: Label::Ood,
                provenance: Provenance::Standard,
            });
        }
    }
    Ok(dets)
}

/// Default threshold grid: `n` uniform quantiles of the score distribution,
/// at levels `i / (n + 1)` for `i = 1..=n`. Duplicate values collapse.
pub fn quantile_thresholds(s: &ScoreMap, n: usize) -> Vec<f32> {
    if n == 0 || s.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f32> = s.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut thresholds: Vec<f32> = (1..=n)
        .map(|i| {
            let level = i as f64 / (n + 1) as f64;
            let idx = (level * (sorted.len() - 1) as f64).round() as usize;
            sorted[idx]
        })
        .collect();
    thresholds.dedup();
    thresholds
}
