//! Depth-based false-positive reduction.
//!
//! Ghost detections (shadows, road markings) have appearance but no 3-D
//! extent. Objects that protrude from the ground show almost no local depth
//! change inside their box, while flat ground under perspective shows a
//! continuous vertical depth gradient. The filter:
//!
//! 1. closes the depth map with a square structuring element (fills
//!    speckle holes from stereo matching),
//! 2. applies a vertical Sobel derivative to get a depth-change map,
//! 3. per box, computes the proportion `c` of pixels with `|change| <
//!    change_threshold`,
//! 4. keeps the box iff `c >= mu`.
//!
//! Far-away regions where the sensor resolves no depth change score `c ~ 1`
//! and are always kept; the filter only bites on close-range ghosts.
//!
//! Morphology uses the van Herk/Gil-Werman running min/max, so the cost per
//! pixel is independent of the kernel size. Borders are edge-replicated
//! throughout, which avoids spurious change bands at the image edges.

use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::raster::{clip_box_to_raster, DepthChangeMap, DepthMap, Raster};
use crate::scoring::Detection;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DepthError {
    #[error("morphology kernel must be >= 1, got {0}")]
    KernelTooSmall(usize),
    #[error("Sobel kernel must be odd and >= 3, got {0}")]
    InvalidSobelKernel(usize),
    #[error("box ({0:?}) covers no pixel of a {1}x{2} raster")]
    BoxOutsideRaster(BoundingBox, usize, usize),
}

/// Parameters of the depth filter.
///
/// `change_threshold` assumes depth values normalized to an 8-bit-like range
/// (the Sobel output is unnormalized); rescale it together with the depth
/// scale factor when feeding raw sensor units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfrConfig {
    /// Side length of the square closing element.
    pub close_kernel: usize,
    /// Sobel aperture; must be odd.
    pub sobel_kernel: usize,
    /// A pixel counts as "flat" when `|change| < change_threshold`.
    pub change_threshold: f32,
    /// Minimum flatness proportion to accept a box.
    pub mu: f64,
}

impl Default for DfrConfig {
    fn default() -> Self {
        Self {
            close_kernel: 10,
            sobel_kernel: 5,
            change_threshold: 10.0,
            mu: 0.3,
        }
    }
}

impl DfrConfig {
    pub fn validate(&self) -> Result<(), DepthError> {
        if self.close_kernel < 1 {
            return Err(DepthError::KernelTooSmall(self.close_kernel));
        }
        if self.sobel_kernel < 3 || self.sobel_kernel.is_multiple_of(2) {
            return Err(DepthError::InvalidSobelKernel(self.sobel_kernel));
        }
        Ok(())
    }
}

// The k-wide window around index i spans offsets [-(k/2), k - 1 - k/2]; for
// odd k this is symmetric, for even k it extends one further up/left.
fn window_radii(k: usize) -> (usize, usize) {
    (k / 2, k - 1 - k / 2)
}

/// Horizontal van Herk/Gil-Werman running min/max of one row: O(1) per
/// element regardless of window size, edge replication, using the caller's
/// scratch buffers (`padded`/`forward`/`backward`, length a multiple of the
/// window size covering `w + before + after`).
///
/// `pick` is a generic parameter so it inlines into the scans; a runtime
/// function pointer here costs an indirect call per pixel.
#[allow(clippy::too_many_arguments)]
fn hscan_row(
    row: &[f32],
    before: usize,
    after: usize,
    pick: impl Fn(f32, f32) -> f32 + Copy,
    padded: &mut [f32],
    forward: &mut [f32],
    backward: &mut [f32],
    out: &mut [f32],
) {
    let w = row.len();
    let k = before + after + 1;
    let len = w + before + after;

    padded[..before].fill(row[0]);
    padded[before..before + w].copy_from_slice(row);
    padded[before + w..len].fill(row[w - 1]);

    for (fwd, pad) in forward.chunks_exact_mut(k).zip(padded.chunks_exact(k)) {
        let mut acc = pad[0];
        fwd[0] = acc;
        for i in 1..k {
            acc = pick(acc, pad[i]);
            fwd[i] = acc;
        }
    }
    for (bwd, pad) in backward.chunks_exact_mut(k).zip(padded.chunks_exact(k)) {
        let mut acc = pad[k - 1];
        bwd[k - 1] = acc;
        for i in (0..k - 1).rev() {
            acc = pick(acc, pad[i]);
            bwd[i] = acc;
        }
    }

    // Window for output x covers padded indices [x, x + k - 1].
    for ((o, &bv), &fv) in out
        .iter_mut()
        .zip(&backward[..w])
        .zip(&forward[k - 1..k - 1 + w])
    {
        *o = pick(bv, fv);
    }
}

/// Produces horizontally filtered rows on demand, memoized in a small ring
/// keyed by source row. Replicated border rows and the overlap between
/// consecutive vertical blocks hit the cache, so each source row is
/// filtered once; a collision only costs a recomputation.
struct FilteredRows<'d, P> {
    src: &'d Raster<f32>,
    before: usize,
    after: usize,
    pick: P,
    padded: Vec<f32>,
    forward: Vec<f32>,
    backward: Vec<f32>,
    cache: Vec<f32>,
    tags: Vec<usize>,
}

impl<'d, P: Fn(f32, f32) -> f32 + Copy> FilteredRows<'d, P> {
    fn new(src: &'d Raster<f32>, before: usize, after: usize, pick: P, neutral: f32, slots: usize) -> Self {
        let w = src.width();
        let k = before + after + 1;
        let padded_len = (w + before + after).div_ceil(k) * k;
        Self {
            src,
            before,
            after,
            pick,
            padded: vec![neutral; padded_len],
            forward: vec![neutral; padded_len],
            backward: vec![neutral; padded_len],
            cache: vec![0.0f32; slots * w],
            tags: vec![usize::MAX; slots],
        }
    }

    fn row(&mut self, src_row: usize) -> &[f32] {
        let w = self.src.width();
        let slot = src_row % self.tags.len();
        if self.tags[slot] != src_row {
            hscan_row(
                self.src.row(src_row),
                self.before,
                self.after,
                self.pick,
                &mut self.padded,
                &mut self.forward,
                &mut self.backward,
                &mut self.cache[slot * w..(slot + 1) * w],
            );
            self.tags[slot] = src_row;
        }
        &self.cache[slot * w..(slot + 1) * w]
    }
}

/// Separable min/max filter over a square window spanning offsets
/// [-before, after] in both axes, with edge replication.
///
/// The vertical block scans are local to one k-row block, so the pass
/// streams over row blocks with scratch that stays in cache: the backward
/// scan of the current block, the forward prefix of the next block, and
/// the on-demand horizontally filtered rows. Nothing intermediate is
/// materialized at image size.
///
/// Output row i (block B, offset j) is pick(bwd[i], fwd[i + k - 1]); for
/// j = 0 the forward term spans exactly block B, which equals bwd at the
/// block start, and for j >= 1 it is the prefix of block B + 1 up to row
/// j - 1.
fn separable_extreme_filter(
    d: &Raster<f32>,
    before: usize,
    after: usize,
    pick: impl Fn(f32, f32) -> f32 + Copy,
    neutral: f32,
) -> Raster<f32> {
    let (w, h) = (d.width(), d.height());
    let k = before + after + 1;
    let len = h + k - 1; // before + h + after
    let clamp_row = |i: usize| i.saturating_sub(before).min(h - 1);
    let mut rows = FilteredRows::new(d, before, after, pick, neutral, k + 2);

    let mut out = Raster::filled(w, h, 0.0f32);
    let mut bwd = vec![0.0f32; k * w];
    let mut fwd_acc = vec![0.0f32; w];

    let blocks = len.div_ceil(k);
    for block in 0..blocks {
        let start = block * k;
        if start >= h {
            break; // no output rows left
        }
        // A block that contains an output row is always full: start < h
        // implies start + k - 1 <= len - 1.
        debug_assert!(start + k <= len);

        // Block-local backward scan.
        bwd[(k - 1) * w..].copy_from_slice(rows.row(clamp_row(start + k - 1)));
        for j in (0..k - 1).rev() {
            let (head, tail) = bwd.split_at_mut((j + 1) * w);
            let dst = &mut head[j * w..];
            let next = &tail[..w];
            let src = rows.row(clamp_row(start + j));
            for ((v, &nx), &s) in dst.iter_mut().zip(next).zip(src) {
                *v = pick(nx, s);
            }
        }

        // Offset 0: the forward term covers exactly block B, which equals
        // the backward scan at the block start.
        out.values_mut()[start * w..(start + 1) * w].copy_from_slice(&bwd[..w]);

        // Offsets >= 1 stream the forward prefix of block B + 1.
        for j in 1..k {
            let i = start + j;
            if i >= h {
                break;
            }
            let src = rows.row(clamp_row(i + k - 1));
            if j == 1 {
                fwd_acc.copy_from_slice(src);
            } else {
                for (v, &s) in fwd_acc.iter_mut().zip(src) {
                    *v = pick(*v, s);
                }
            }
            let out_row = &mut out.values_mut()[i * w..(i + 1) * w];
            for ((o, &bv), &fv) in out_row
                .iter_mut()
                .zip(&bwd[j * w..(j + 1) * w])
                .zip(fwd_acc.iter())
            {
                *o = pick(bv, fv);
            }
        }
    }
    out
}

// Raster values are finite by invariant, so the plain comparison select is
// equivalent to f32::max/min and compiles to a single vector max/min.
#[inline(always)]
fn fmax(a: f32, b: f32) -> f32 {
    if a > b {
        a
    } else {
        b
    }
}

#[inline(always)]
fn fmin(a: f32, b: f32) -> f32 {
    if a < b {
        a
    } else {
        b
    }
}

fn max_filter(d: &Raster<f32>, before: usize, after: usize) -> Raster<f32> {
    separable_extreme_filter(d, before, after, fmax, f32::NEG_INFINITY)
}

fn min_filter(d: &Raster<f32>, before: usize, after: usize) -> Raster<f32> {
    separable_extreme_filter(d, before, after, fmin, f32::INFINITY)
}

/// Grayscale dilation with a k-by-k square structuring element.
pub fn dilate(d: &DepthMap, k: usize) -> Result<DepthMap, DepthError> {
    if k < 1 {
        return Err(DepthError::KernelTooSmall(k));
    }
    let (a, b) = window_radii(k);
    Ok(max_filter(d, a, b))
}

/// Grayscale erosion with a k-by-k square structuring element.
pub fn erode(d: &DepthMap, k: usize) -> Result<DepthMap, DepthError> {
    if k < 1 {
        return Err(DepthError::KernelTooSmall(k));
    }
    let (a, b) = window_radii(k);
    Ok(min_filter(d, a, b))
}

/// Grayscale closing: dilation followed by erosion with the reflected
/// element.
///
/// The reflection matters for even kernel sizes, where the window is not
/// symmetric about its anchor: eroding with the mirrored window makes the
/// pair an adjunction, which is what gives closing its exact idempotence
/// and extensivity.
pub fn morphological_close(d: &DepthMap, k: usize) -> Result<DepthMap, DepthError> {
    if k < 1 {
        return Err(DepthError::KernelTooSmall(k));
    }
    let (a, b) = window_radii(k);
    Ok(min_filter(&max_filter(d, a, b), b, a))
}

/// Binomial smoothing taps `C(k-1, j)` used across x.
fn sobel_smoothing_kernel(k: usize) -> Vec<f32> {
    let mut taps = vec![1.0f64];
    for _ in 1..k {
        let mut next = vec![0.0; taps.len() + 1];
        for (i, &t) in taps.iter().enumerate() {
            next[i] += t;
            next[i + 1] += t;
        }
        taps = next;
    }
    taps.into_iter().map(|t| t as f32).collect()
}

/// First-derivative taps: coefficients of `(1 + z)^(k-2) * (z - 1)`.
/// For k=3 this is `[-1, 0, 1]`, for k=5 `[-1, -2, 0, 2, 1]`.
fn sobel_derivative_kernel(k: usize) -> Vec<f32> {
    let smooth = sobel_smoothing_kernel(k - 1);
    let mut taps = vec![0.0f32; k];
    for (i, &s) in smooth.iter().enumerate() {
        taps[i] -= s;
        taps[i + 1] += s;
    }
    taps
}

/// Vertical Sobel derivative of order-`k` aperture: binomial smoothing across
/// x, first derivative across y, edge-replicated borders. Positive response
/// where depth increases downward. The output is unnormalized, matching the
/// usual convention.
pub fn sobel_y(d: &DepthMap, k: usize) -> Result<DepthChangeMap, DepthError> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(DepthError::InvalidSobelKernel(k));
    }
    let (w, h) = (d.width(), d.height());
    let r = k / 2;
    let smooth = sobel_smoothing_kernel(k);
    let deriv = sobel_derivative_kernel(k);

    // Horizontal smoothing pass: clamp-free shifted-slice accumulation over
    // the interior, per-pixel clamping only within the borders.
    let mut smoothed = Raster::filled(w, h, 0.0f32);
    for y in 0..h {
        let row = d.row(y);
        let out_row = &mut smoothed.values_mut()[y * w..(y + 1) * w];
        if w > 2 * r {
            let interior = w - 2 * r;
            for (j, &s) in smooth.iter().enumerate() {
                let shifted = &row[j..j + interior];
                for (o, &v) in out_row[r..r + interior].iter_mut().zip(shifted) {
                    *o += s * v;
                }
            }
        }
        let border = |x: usize| {
            let mut acc = 0.0f32;
            for (j, &s) in smooth.iter().enumerate() {
                acc += s * row[(x + j).saturating_sub(r).min(w - 1)];
            }
            acc
        };
        for (x, o) in out_row.iter_mut().enumerate().take(r.min(w)) {
            *o = border(x);
        }
        let tail = w.saturating_sub(r);
        for (x, o) in out_row.iter_mut().enumerate().skip(tail) {
            *o = border(x);
        }
    }

    // Vertical derivative pass, accumulating whole rows.
    let mut out = Raster::filled(w, h, 0.0f32);
    for y in 0..h {
        let out_row = &mut out.values_mut()[y * w..(y + 1) * w];
        for (i, &c) in deriv.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let yi = (y + i).saturating_sub(r).min(h - 1);
            for (o, &s) in out_row.iter_mut().zip(smoothed.row(yi)) {
                *o += c * s;
            }
        }
    }
    Ok(out)
}

/// Depth-change map: closing with `close_kernel` followed by the vertical
/// Sobel with `sobel_kernel`. Computed once per frame and shared by all
/// per-box evaluations.
pub fn depth_change_map(d: &DepthMap, cfg: &DfrConfig) -> Result<DepthChangeMap, DepthError> {
    cfg.validate()?;
    sobel_y(&morphological_close(d, cfg.close_kernel)?, cfg.sobel_kernel)
}

/// Fraction of the box's pixels whose absolute depth change is below the
/// threshold. The box is clipped to the raster with outward rounding; a box
/// covering no pixel is an error.
pub fn flatness_proportion(
    c_map: &DepthChangeMap,
    bbox: &BoundingBox,
    cfg: &DfrConfig,
) -> Result<f64, DepthError> {
    let rect = clip_box_to_raster(bbox, c_map.width(), c_map.height())
        .ok_or(DepthError::BoxOutsideRaster(*bbox, c_map.width(), c_map.height()))?;
    let mut flat = 0usize;
    for y in rect.y0..rect.y1 {
        let row = &c_map.row(y)[rect.x0..rect.x1];
        flat += row
            .iter()
            .filter(|v| v.abs() < cfg.change_threshold)
            .count();
    }
    Ok(flat as f64 / rect.pixel_count() as f64)
}

/// Result of the depth filter over one frame's detections.
#[derive(Debug, Clone, Default)]
pub struct DfrOutcome {
    /// Detections with flatness proportion >= mu, input order preserved.
    pub kept: Vec<Detection>,
    /// Detections rejected as non-protruding.
    pub rejected: Vec<Detection>,
    /// Per-box failures (input index and cause); the box is dropped, not fatal.
    pub errors: Vec<(usize, DepthError)>,
}

/// Runs the full depth filter: change map once, then the per-box decision.
pub fn dfr_filter(
    dets: &[Detection],
    depth: &DepthMap,
    cfg: &DfrConfig,
) -> Result<DfrOutcome, DepthError> {
    let c_map = depth_change_map(depth, cfg)?;
    Ok(dfr_filter_on_change_map(dets, &c_map, cfg))
}

/// Per-box accept/reject against a precomputed change map.
pub fn dfr_filter_on_change_map(
    dets: &[Detection],
    c_map: &DepthChangeMap,
    cfg: &DfrConfig,
) -> DfrOutcome {
    let mut outcome = DfrOutcome::default();
    for (i, det) in dets.iter().enumerate() {
        match flatness_proportion(c_map, &det.bbox, cfg) {
            Ok(c) if c >= cfg.mu => outcome.kept.push(det.clone()),
            Ok(_) => outcome.rejected.push(det.clone()),
            Err(e) => outcome.errors.push((i, e)),
        }
    }
    outcome
}
