//! Occupancy loss and the inference-time filtering cascade.
//!
//! A detection carries two scores: `sco`, the product of the maximum class
//! probability and the detector's objectness output, and `occ`, the predicted
//! occupancy (fraction of the box covered by any object). Standard filtering
//! keeps `sco >= mu_sco`; recall enhancement additionally rescues low-`sco`
//! detections whose occupancy clears `mu_occ` and relabels them as OOD.

use crate::geometry::BoundingBox;

/// Clamp applied to the occupancy prediction before taking logs; the BCE is
/// undefined at exactly 0 or 1.
pub const BCE_EPSILON: f64 = 1e-7;

/// Resolved class of a detection or ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// Index into the known-class label space.
    Known(usize),
    /// Out-of-distribution: an object outside the training classes.
    Ood,
}

impl Label {
    pub fn is_ood(&self) -> bool {
        matches!(self, Label::Ood)
    }
}

/// Which filtering path produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Passed the standard `sco` filter.
    Standard,
    /// Rescued by the occupancy-based recall enhancement; always OOD-labeled.
    RecallEnhanced,
}

/// One detection: a box plus its scores and resolved label.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    /// Per-class probabilities, length K known classes + 1 OOD class.
    /// Empty for detections loaded from files, where the label is already
    /// resolved.
    pub class_scores: Vec<f64>,
    /// Max class probability times objectness; the standard keep/drop score.
    pub sco: f64,
    /// Predicted occupancy in `[0, 1]`.
    pub occ: f64,
    pub label: Label,
    pub provenance: Provenance,
}

impl Detection {
    /// Score used for ranking under the detection budget: `sco` for standard
    /// detections, `occ` for recall-enhanced ones (their `sco` is below the
    /// filter threshold by construction).
    pub fn ranking_score(&self) -> f64 {
        match self.provenance {
            Provenance::Standard => self.sco,
            Provenance::RecallEnhanced => self.occ,
        }
    }

    /// Label implied by `class_scores` (last index is the OOD class), or the
    /// stored label when no class scores are attached. Ties resolve to the
    /// first maximum.
    fn resolved_label(&self) -> Label {
        if self.class_scores.is_empty() {
            return self.label;
        }
        let mut argmax = 0;
        for (i, &score) in self.class_scores.iter().enumerate() {
            if score > self.class_scores[argmax] {
                argmax = i;
            }
        }
        if argmax + 1 == self.class_scores.len() {
            Label::Ood
        } else {
            Label::Known(argmax)
        }
    }
}

/// Thresholds for the filtering cascade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Keep threshold on `sco` for the standard filter.
    pub mu_sco: f64,
    /// Keep threshold on `occ` for recall enhancement.
    pub mu_occ: f64,
    /// Per-image detection budget.
    pub budget: usize,
    /// Occupancy loss weight; carried for API completeness.
    pub w_o: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            mu_sco: 0.01,
            mu_occ: 0.01,
            budget: 100,
            w_o: 1.0,
        }
    }
}

/// Binary cross-entropy between the occupancy prediction `b_occ` and target
/// `t_occ`: `-t ln(b) - (1 - t) ln(1 - b)`, with `b` clamped away from the
/// endpoints by [`BCE_EPSILON`].
pub fn bce_occupancy_loss(b_occ: f64, t_occ: f64) -> f64 {
    let b = b_occ.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -t_occ * b.ln() - (1.0 - t_occ) * (1.0 - b).ln()
}

/// Analytic derivative of [`bce_occupancy_loss`] with respect to `b_occ`:
/// `(b - t) / (b (1 - b))`, under the same endpoint clamp.
pub fn bce_occupancy_grad(b_occ: f64, t_occ: f64) -> f64 {
    let b = b_occ.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    (b - t_occ) / (b * (1.0 - b))
}

/// Keeps detections with `sco >= mu_sco`, resolving labels from the class
/// scores and marking them as standard.
pub fn standard_filter(dets: &[Detection], cfg: &FilterConfig) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.sco >= cfg.mu_sco)
        .map(|d| Detection {
            label: d.resolved_label(),
            provenance: Provenance::Standard,
            ..d.clone()
        })
        .collect()
}

/// Standard filter plus the OOD recall-enhancement pass.
///
/// The output is the union of the standard keeps and the rescued set
/// `{sco < mu_sco and occ >= mu_occ}`; the two predicates are mutually
/// exclusive, so the subsets partition the output. Rescued detections are
/// relabeled OOD with [`Provenance::RecallEnhanced`]. Input order is
/// preserved.
pub fn ood_recall_enhancement(dets: &[Detection], cfg: &FilterConfig) -> Vec<Detection> {
    dets.iter()
        .filter_map(|d| {
            if d.sco >= cfg.mu_sco {
                Some(Detection {
                    label: d.resolved_label(),
                    provenance: Provenance::Standard,
                    ..d.clone()
                })
            } else if d.occ >= cfg.mu_occ {
                Some(Detection {
                    label: Label::Ood,
                    provenance: Provenance::RecallEnhanced,
                    ..d.clone()
                })
            } else {
                None
            }
        })
        .collect()
}

/// Which detections a budget query considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// Known-class labels only.
    Known,
    /// OOD-labeled detections only.
    Unknown,
    All,
}

impl Selector {
    fn admits(&self, d: &Detection) -> bool {
        match self {
            Selector::Known => !d.label.is_ood(),
            Selector::Unknown => d.label.is_ood(),
            Selector::All => true,
        }
    }
}

/// Top-`k` detections matching the selector, ordered by ranking score
/// descending with ties broken by input order.
pub fn budget_top_k(dets: &[Detection], k: usize, selector: Selector) -> Vec<Detection> {
    let mut selected: Vec<&Detection> = dets.iter().filter(|d| selector.admits(d)).collect();
    // Stable sort keeps input order on equal scores.
    selected.sort_by(|a, b| b.ranking_score().partial_cmp(&a.ranking_score()).unwrap());
    selected.into_iter().take(k).cloned().collect()
}
