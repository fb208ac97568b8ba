//! Exact axis-aligned box arithmetic.
//!
//! Coordinates are continuous (sub-pixel) image coordinates with the origin
//! at the top-left corner, `x` growing right and `y` growing down. All area
//! queries are exact up to floating-point rounding; in particular
//! [`BoxSet::union_area`] uses a coordinate-compression sweep rather than
//! sampling, so property tests can hold it to ~1e-9 tolerances.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// Box corners are not ordered `x1 <= x2`, `y1 <= y2`, or are non-finite.
    #[error("invalid box corners ({x1}, {y1}, {x2}, {y2})")]
    InvalidCorners { x1: f64, y1: f64, x2: f64, y2: f64 },
    /// The predicted box has zero area, so the occupancy ratio is undefined.
    #[error("occupancy target is undefined for a zero-area predicted box")]
    ZeroAreaPrediction,
}

/// Axis-aligned rectangle with `(x1, y1)` the top-left and `(x2, y2)` the
/// bottom-right corner. Degenerate (zero-area) boxes are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    /// Builds a box, rejecting inverted corners and non-finite coordinates.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 > x2 || y1 > y2 {
            return Err(GeometryError::InvalidCorners { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    /// Area in square pixels; zero for degenerate boxes.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// The overlapping rectangle, or `None` when the boxes are disjoint or
    /// touch only along an edge.
    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        if x1 < x2 && y1 < y2 {
            Some(BoundingBox { x1, y1, x2, y2 })
        } else {
            None
        }
    }

    /// Whether the point lies inside the box (closed on the low edge, open on
    /// the high edge, so adjacent boxes do not double-count).
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }
}

/// Area of the overlap between two boxes; 0 when disjoint.
pub fn intersect_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

/// Intersection over union in `[0, 1]`. Two zero-area boxes yield 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersect_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// An unordered collection of boxes; all area queries are set functions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoxSet {
    pub boxes: Vec<BoundingBox>,
}

impl BoxSet {
    pub fn new(boxes: Vec<BoundingBox>) -> Self {
        Self { boxes }
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Exact area of the union of all boxes.
    ///
    /// Sweeps the x-axis over the compressed coordinate grid; within each
    /// vertical slab the covered height is the measure of the union of the
    /// y-intervals of the boxes spanning that slab.
    pub fn union_area(&self) -> f64 {
        let live: Vec<&BoundingBox> = self.boxes.iter().filter(|b| b.area() > 0.0).collect();
        if live.is_empty() {
            return 0.0;
        }

        let mut xs: Vec<f64> = live.iter().flat_map(|b| [b.x1, b.x2]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();

        let mut total = 0.0;
        let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(live.len());
        for slab in xs.windows(2) {
            let (x_lo, x_hi) = (slab[0], slab[1]);
            if x_hi <= x_lo {
                continue;
            }
            let mid = 0.5 * (x_lo + x_hi);
            intervals.clear();
            intervals.extend(
                live.iter()
                    .filter(|b| b.x1 <= mid && mid < b.x2)
                    .map(|b| (b.y1, b.y2)),
            );
            total += (x_hi - x_lo) * covered_length(&mut intervals);
        }
        total
    }
}

impl FromIterator<BoundingBox> for BoxSet {
    fn from_iter<I: IntoIterator<Item = BoundingBox>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Measure of the union of 1-D intervals. Sorts in place.
fn covered_length(intervals: &mut [(f64, f64)]) -> f64 {
    intervals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut covered = 0.0;
    let mut cursor = f64::NEG_INFINITY;
    for &(lo, hi) in intervals.iter() {
        let lo = lo.max(cursor);
        if hi > lo {
            covered += hi - lo;
            cursor = hi;
        }
    }
    covered
}

/// Exact occupancy target: the fraction of `pred`'s area covered by the
/// union of the ground-truth boxes.
///
/// Ground-truth boxes are clipped to `pred` before the union, so no image
/// bounds are needed. Errors on a zero-area `pred` (the ratio is undefined).
pub fn occupancy_target_exact(pred: &BoundingBox, gts: &BoxSet) -> Result<f64, GeometryError> {
    let denom = pred.area();
    if denom <= 0.0 {
        return Err(GeometryError::ZeroAreaPrediction);
    }
    let clipped: BoxSet = gts
        .boxes
        .iter()
        .filter_map(|gt| pred.intersection(gt))
        .collect();
    Ok((clipped.union_area() / denom).clamp(0.0, 1.0))
}

/// Upper-bound occupancy target: sum of pairwise intersections over the
/// predicted area, without the final clamp to 1.
///
/// Exceeds [`occupancy_target_exact`] exactly when ground-truth boxes overlap
/// each other inside `pred`; the two agree when the clipped intersections are
/// pairwise disjoint.
pub fn occupancy_target_approx_raw(
    pred: &BoundingBox,
    gts: &BoxSet,
) -> Result<f64, GeometryError> {
    let denom = pred.area();
    if denom <= 0.0 {
        return Err(GeometryError::ZeroAreaPrediction);
    }
    // Summing in sorted order keeps the result exactly invariant under
    // permutations of the ground-truth set.
    let mut areas: Vec<f64> = gts.boxes.iter().map(|gt| intersect_area(pred, gt)).collect();
    areas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(areas.into_iter().sum::<f64>() / denom)
}

/// Upper-bound occupancy target clamped into `[0, 1]` so it stays a valid
/// BCE target under occlusion.
pub fn occupancy_target_approx(pred: &BoundingBox, gts: &BoxSet) -> Result<f64, GeometryError> {
    occupancy_target_approx_raw(pred, gts).map(|v| v.min(1.0))
}
