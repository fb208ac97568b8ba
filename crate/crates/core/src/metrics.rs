//! Detection benchmark metrics.
//!
//! Three headline numbers per dataset:
//!
//! * **mAP** over the known classes, COCO-style: 101-point interpolated AP
//!   averaged over the IoU grid 0.50:0.05:0.95 and over classes present in
//!   the ground truth. AP50 is reported alongside.
//! * **R@k** — recall of unknown ground truth under a per-image budget of
//!   `k` unknown detections, matched greedily at a single IoU threshold.
//! * **FPR@k** — per-mille rate of budgeted unknown detections that match no
//!   ground truth (known or unknown) while lying inside the region of
//!   interest. Unknown objects are not exhaustively annotated, so false
//!   positives are only countable where annotations are exhaustive (the RoI
//!   mask, typically the road); the denominator is `k` slots per RoI image.
//!
//! Matching is greedy in score order with one-to-one GT assignment, the
//! standard detection-benchmark convention.

use crate::geometry::{iou, BoundingBox};
use crate::raster::{clip_box_to_raster, BinaryMask};
use crate::scoring::{budget_top_k, Detection, Label, Selector};

/// One annotated object. `Label::Ood` marks unknown ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub bbox: BoundingBox,
    pub label: Label,
}

/// Region-of-interest mask: true where annotations are exhaustive.
pub type RoiMask = BinaryMask;

/// Everything the evaluator needs for one image.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub id: String,
    pub dets: Vec<Detection>,
    pub gts: Vec<GtObject>,
    pub roi: Option<RoiMask>,
}

/// Outcome of greedy matching for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// For each detection (input order), the matched GT index if any.
    pub det_to_gt: Vec<Option<usize>>,
    /// Whether each GT was claimed by some detection.
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn matched_detections(&self) -> usize {
        self.det_to_gt.iter().filter(|m| m.is_some()).count()
    }
}

/// Greedy one-to-one matching.
///
/// Detections are processed in descending ranking score (stable on ties);
/// each claims the still-unmatched GT with the highest IoU at or above
/// `iou_thr`, ties broken by the lower GT index.
pub fn match_detections(dets: &[Detection], gts: &[GtObject], iou_thr: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .ranking_score()
            .partial_cmp(&dets[a].ranking_score())
            .unwrap()
    });

    let mut det_to_gt = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for det_idx in order {
        let mut best: Option<(usize, f64)> = None;
        for (gt_idx, gt) in gts.iter().enumerate() {
            if gt_matched[gt_idx] {
                continue;
            }
            let overlap = iou(&dets[det_idx].bbox, &gt.bbox);
            if overlap < iou_thr {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, best_iou)) => overlap > best_iou,
            };
            if better {
                best = Some((gt_idx, overlap));
            }
        }
        if let Some((gt_idx, _)) = best {
            det_to_gt[det_idx] = Some(gt_idx);
            gt_matched[gt_idx] = true;
        }
    }
    MatchResult {
        det_to_gt,
        gt_matched,
    }
}

/// Recall of unknown ground truth, in percent, under a top-`k` unknown
/// detection budget per image. `None` when the dataset has no unknown GT
/// (the ratio is undefined, not 100).
pub fn recall_at_k(images: &[ImageEval], k: usize, iou_thr: f64) -> Option<f64> {
    let (matched, total) = unknown_match_counts(images, k, iou_thr);
    if total == 0 {
        None
    } else {
        Some(100.0 * matched as f64 / total as f64)
    }
}

fn unknown_match_counts(images: &[ImageEval], k: usize, iou_thr: f64) -> (usize, usize) {
    let mut matched = 0usize;
    let mut total = 0usize;
    for img in images {
        let unknown_gts: Vec<GtObject> =
            img.gts.iter().filter(|g| g.label.is_ood()).cloned().collect();
        total += unknown_gts.len();
        if unknown_gts.is_empty() {
            continue;
        }
        let kept = budget_top_k(&img.dets, k, Selector::Unknown);
        matched += match_detections(&kept, &unknown_gts, iou_thr).matched_detections();
    }
    (matched, total)
}

/// False-positive rate of budgeted unknown detections inside the RoI, in
/// per-mille of the available budget slots.
///
/// A budgeted unknown detection is a false positive when it matches no GT of
/// any kind at `iou_thr` and the majority of its box area lies inside the
/// RoI. Images without an RoI mask are skipped (with a diagnostic); the
/// denominator is `k` times the number of RoI images. `None` when no image
/// carries an RoI.
pub fn fpr_at_k(
    images: &[ImageEval],
    k: usize,
    iou_thr: f64,
    diagnostics: &mut Vec<String>,
) -> Option<f64> {
    let mut false_positives = 0usize;
    let mut roi_images = 0usize;
    for img in images {
        let Some(roi) = &img.roi else {
            diagnostics.push(format!("image {}: no RoI mask, skipped for FPR", img.id));
            continue;
        };
        roi_images += 1;
        let kept = budget_top_k(&img.dets, k, Selector::Unknown);
        let matches = match_detections(&kept, &img.gts, iou_thr);
        for (det, matched) in kept.iter().zip(&matches.det_to_gt) {
            if matched.is_none() && roi_area_fraction(roi, &det.bbox) >= 0.5 {
                false_positives += 1;
            }
        }
    }
    if roi_images == 0 {
        None
    } else {
        Some(1000.0 * false_positives as f64 / (roi_images * k) as f64)
    }
}

/// Fraction of the box's rasterized pixels that are RoI-true. Pixels outside
/// the image count against the box.
fn roi_area_fraction(roi: &RoiMask, bbox: &BoundingBox) -> f64 {
    let Some(rect) = clip_box_to_raster(bbox, roi.width(), roi.height()) else {
        return 0.0;
    };
    let mut inside = 0usize;
    for y in rect.y0..rect.y1 {
        inside += roi.row(y)[rect.x0..rect.x1].iter().filter(|&&v| v).count();
    }
    let full_pixels = ((bbox.x2.ceil() - bbox.x1.floor()) * (bbox.y2.ceil() - bbox.y1.floor()))
        .max(rect.pixel_count() as f64);
    inside as f64 / full_pixels
}

/// Average precision for one known class at one IoU threshold, in percent.
/// `None` when the class has no ground truth anywhere in the dataset.
pub fn average_precision(images: &[ImageEval], class: usize, iou_thr: f64) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = Vec::new(); // (score, is_tp)
    let mut n_gt = 0usize;
    for img in images {
        let gts: Vec<GtObject> = img
            .gts
            .iter()
            .filter(|g| g.label == Label::Known(class))
            .cloned()
            .collect();
        n_gt += gts.len();
        let dets: Vec<Detection> = img
            .dets
            .iter()
            .filter(|d| d.label == Label::Known(class))
            .cloned()
            .collect();
        let matches = match_detections(&dets, &gts, iou_thr);
        for (det, matched) in dets.iter().zip(&matches.det_to_gt) {
            scored.push((det.ranking_score(), matched.is_some()));
        }
    }
    if n_gt == 0 {
        return None;
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut precisions = Vec::with_capacity(scored.len());
    let mut recalls = Vec::with_capacity(scored.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, is_tp) in &scored {
        if *is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    Some(100.0 * interpolated_ap_101(&recalls, &precisions))
}

/// 101-point interpolated AP: mean over recall levels {0.00, 0.01, .., 1.00}
/// of the precision envelope `max { p(r') : r' >= r }`.
fn interpolated_ap_101(recalls: &[f64], precisions: &[f64]) -> f64 {
    // Precision envelope, non-increasing from the right.
    let mut envelope = precisions.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut total = 0.0;
    for level in 0..=100 {
        let r = level as f64 / 100.0;
        // First curve point with recall >= r.
        let p = recalls
            .iter()
            .position(|&rec| rec >= r - 1e-12)
            .map_or(0.0, |idx| envelope[idx]);
        total += p;
    }
    total / 101.0
}

/// The COCO IoU grid 0.50:0.05:0.95.
pub fn coco_iou_grid() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Per-class AP summary, in percent. `None` entries mark classes absent from
/// the ground truth (excluded from the means).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class: usize,
    pub name: String,
    /// Mean AP over the COCO IoU grid.
    pub ap: Option<f64>,
    /// AP at IoU 0.5.
    pub ap50: Option<f64>,
}

/// mAP over known classes: per class, AP averaged over the COCO IoU grid;
/// the mean skips classes without ground truth.
pub fn map_known(images: &[ImageEval], class_names: &[String]) -> (Option<f64>, Option<f64>, Vec<ClassAp>) {
    let grid = coco_iou_grid();
    let mut per_class = Vec::with_capacity(class_names.len());
    for (c, name) in class_names.iter().enumerate() {
        let slices: Vec<Option<f64>> = grid
            .iter()
            .map(|&thr| average_precision(images, c, thr))
            .collect();
        let ap = if slices.iter().all(|s| s.is_some()) {
            Some(slices.iter().map(|s| s.unwrap()).sum::<f64>() / grid.len() as f64)
        } else {
            None
        };
        per_class.push(ClassAp {
            class: c,
            name: name.clone(),
            ap,
            ap50: slices[0],
        });
    }
    let present: Vec<&ClassAp> = per_class.iter().filter(|c| c.ap.is_some()).collect();
    let map = if present.is_empty() {
        None
    } else {
        Some(present.iter().map(|c| c.ap.unwrap()).sum::<f64>() / present.len() as f64)
    };
    let ap50 = if present.is_empty() {
        None
    } else {
        Some(present.iter().map(|c| c.ap50.unwrap()).sum::<f64>() / present.len() as f64)
    };
    (map, ap50, per_class)
}

/// Aggregated evaluation results. Percentages in [0, 100], rates in
/// per-mille.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub images: usize,
    pub k: usize,
    pub iou_thr: f64,
    pub map_known: Option<f64>,
    pub ap50_known: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub fpr_at_k: Option<f64>,
    pub per_class: Vec<ClassAp>,
    pub matched_unknown_gt: usize,
    pub total_unknown_gt: usize,
    pub diagnostics: Vec<String>,
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// Unknown detection budget per image.
    pub k: usize,
    /// Matching threshold for R@k and FPR@k.
    pub iou_thr: f64,
    /// Known class names, in label-space order.
    pub class_names: Vec<String>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            k: 100,
            iou_thr: 0.5,
            class_names: Vec::new(),
        }
    }
}

/// Runs all metrics over the dataset.
pub fn evaluate(images: &[ImageEval], cfg: &MetricConfig) -> EvalReport {
    let mut diagnostics = Vec::new();
    let (matched_unknown, total_unknown) = unknown_match_counts(images, cfg.k, cfg.iou_thr);
    let recall = recall_at_k(images, cfg.k, cfg.iou_thr);
    if recall.is_none() {
        diagnostics.push("no unknown ground truth: recall undefined".to_string());
    }
    let fpr = fpr_at_k(images, cfg.k, cfg.iou_thr, &mut diagnostics);
    if fpr.is_none() {
        diagnostics.push("no RoI masks: FPR undefined".to_string());
    }
    let (map, ap50, per_class) = map_known(images, &cfg.class_names);
    EvalReport {
        images: images.len(),
        k: cfg.k,
        iou_thr: cfg.iou_thr,
        map_known: map,
        ap50_known: ap50,
        recall_at_k: recall,
        fpr_at_k: fpr,
        per_class,
        matched_unknown_gt: matched_unknown,
        total_unknown_gt: total_unknown,
        diagnostics,
    }
}
