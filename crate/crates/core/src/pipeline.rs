//! Configuration and the end-to-end pipeline: filter, optional depth-based
//! false-positive reduction, budget, evaluation.
//!
//! The pipeline is a pure function of its input files and configuration:
//! per-image work runs in parallel but aggregation is an ordered reduce over
//! sorted image ids, so two runs produce byte-identical reports. Per-image
//! failures (missing or unreadable depth map when the depth filter is on)
//! skip the image and are reported to the caller; they do not abort the run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AD_CLASSES;
use crate::depth::{dfr_filter, DepthError, DfrConfig};
use crate::formats::{self, FormatError};
use crate::metrics::{evaluate, EvalReport, ImageEval, MetricConfig};
use crate::raster::DepthMap;
use crate::scoring::{budget_top_k, ood_recall_enhancement, FilterConfig, Selector};
use crate::synth::Scene;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Depth(#[from] DepthError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub filter: FilterSection,
    pub dfr: DfrSection,
    pub metrics: MetricsSection,
    pub labels: LabelSection,
    pub depth: DepthSection,
    pub mask2box: Mask2BoxSection,
    pub augment: AugmentSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FilterSection {
    pub mu_sco: f64,
    pub mu_occ: f64,
    pub budget: usize,
    pub w_o: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::default();
        Self {
            mu_sco: d.mu_sco,
            mu_occ: d.mu_occ,
            budget: d.budget,
            w_o: d.w_o,
        }
    }
}

impl FilterSection {
    pub fn to_filter_config(&self) -> FilterConfig {
        FilterConfig {
            mu_sco: self.mu_sco,
            mu_occ: self.mu_occ,
            budget: self.budget,
            w_o: self.w_o,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DfrSection {
    pub enabled: bool,
    pub close_kernel: usize,
    pub sobel_kernel: usize,
    pub change_threshold: f32,
    pub mu: f64,
}

impl Default for DfrSection {
    fn default() -> Self {
        let d = DfrConfig::default();
        Self {
            enabled: false,
            close_kernel: d.close_kernel,
            sobel_kernel: d.sobel_kernel,
            change_threshold: d.change_threshold,
            mu: d.mu,
        }
    }
}

impl DfrSection {
    pub fn to_dfr_config(&self) -> DfrConfig {
        DfrConfig {
            close_kernel: self.close_kernel,
            sobel_kernel: self.sobel_kernel,
            change_threshold: self.change_threshold,
            mu: self.mu,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MetricsSection {
    pub k: usize,
    pub iou_thr: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { k: 100, iou_thr: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LabelSection {
    pub known: Vec<String>,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            known: AD_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DepthSection {
    /// Multiplier applied to stored 16-bit depth values on load.
    pub scale: f32,
}

impl Default for DepthSection {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Mask2BoxSection {
    /// Explicit threshold grid; when empty, `quantiles` uniform quantiles of
    /// the score map are used.
    pub thresholds: Vec<f32>,
    pub quantiles: usize,
    /// Scale for score maps stored as 16-bit PNG.
    pub png_scale: f32,
}

impl Default for Mask2BoxSection {
    fn default() -> Self {
        Self {
            thresholds: Vec::new(),
            quantiles: 16,
            png_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AugmentSection {
    /// Mixup blend factor range, sampled uniformly.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub canvas_width: u32,
    pub canvas_height: u32,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            lambda_min: 0.4,
            lambda_max: 0.6,
            canvas_width: 640,
            canvas_height: 640,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct PathsSection {
    pub detections: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Directory of per-image depth maps named `<image_id>.png` or `.pgm`.
    pub depth_dir: Option<PathBuf>,
    /// Directory of per-image RoI masks named `<image_id>.png` or `.pgm`.
    pub roi_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// A skipped image and the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSkip {
    pub image_id: String,
    pub reason: String,
}

/// Result of a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub skipped: Vec<ImageSkip>,
}

fn find_raster_file(dir: &Path, image_id: &str) -> Option<PathBuf> {
    for ext in ["png", "pgm"] {
        let candidate = dir.join(format!("{image_id}.{ext}"));
        if candidate.exists() {
            return Some(candidate);
        }
    }
    None
}

/// Runs filter → optional depth filter → budget → metrics over the files
/// referenced by the configuration.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    let detections_path = cfg
        .paths
        .detections
        .as_ref()
        .ok_or_else(|| PipelineError::Config("paths.detections is required".into()))?;
    let gt_path = cfg
        .paths
        .ground_truth
        .as_ref()
        .ok_or_else(|| PipelineError::Config("paths.ground_truth is required".into()))?;
    if cfg.dfr.enabled {
        cfg.dfr.to_dfr_config().validate()?;
        if cfg.paths.depth_dir.is_none() {
            return Err(PipelineError::Config(
                "dfr.enabled requires paths.depth_dir".into(),
            ));
        }
    }

    let class_names = &cfg.labels.known;
    let loaded = formats::load_detections(detections_path, class_names)?;
    let gts = formats::load_ground_truth(gt_path, class_names)?;

    let image_ids: BTreeSet<String> = loaded
        .per_image
        .keys()
        .chain(gts.keys())
        .cloned()
        .collect();

    let filter_cfg = cfg.filter.to_filter_config();
    let dfr_cfg = cfg.dfr.to_dfr_config();
    let empty: Vec<crate::scoring::Detection> = Vec::new();

    let per_image: Vec<Result<(ImageEval, Vec<String>), ImageSkip>> = image_ids
        .par_iter()
        .map(|id| {
            let mut diagnostics = Vec::new();
            let raw = loaded.per_image.get(id).unwrap_or(&empty);
            let mut dets = ood_recall_enhancement(raw, &filter_cfg);

            if cfg.dfr.enabled {
                let depth_dir = cfg.paths.depth_dir.as_ref().unwrap();
                let Some(depth_path) = find_raster_file(depth_dir, id) else {
                    return Err(ImageSkip {
                        image_id: id.clone(),
                        reason: format!("no depth map under {}", depth_dir.display()),
                    });
                };
                let depth: DepthMap = match formats::load_depth(&depth_path, cfg.depth.scale) {
                    Ok(d) => d,
                    Err(e) => {
                        return Err(ImageSkip {
                            image_id: id.clone(),
                            reason: e.to_string(),
                        })
                    }
                };
                let outcome = dfr_filter(&dets, &depth, &dfr_cfg).expect("validated config");
                for (det_idx, err) in &outcome.errors {
                    diagnostics.push(format!("image {id}: detection {det_idx}: {err}"));
                }
                dets = outcome.kept;
            }

            let dets = budget_top_k(&dets, filter_cfg.budget, Selector::All);
            let roi = cfg
                .paths
                .roi_dir
                .as_ref()
                .and_then(|dir| find_raster_file(dir, id))
                .and_then(|path| match formats::load_mask(&path) {
                    Ok(mask) => Some(mask),
                    Err(e) => {
                        diagnostics.push(format!("image {id}: unreadable RoI: {e}"));
                        None
                    }
                });
            Ok((
                ImageEval {
                    id: id.clone(),
                    dets,
                    gts: gts.get(id).cloned().unwrap_or_default(),
                    roi,
                },
                diagnostics,
            ))
        })
        .collect();

    let mut images = Vec::new();
    let mut skipped = Vec::new();
    let mut extra_diagnostics = loaded.warnings.clone();
    for item in per_image {
        match item {
            Ok((image, diags)) => {
                images.push(image);
                extra_diagnostics.extend(diags);
            }
            Err(skip) => skipped.push(skip),
        }
    }

    let metric_cfg = MetricConfig {
        k: cfg.metrics.k,
        iou_thr: cfg.metrics.iou_thr,
        class_names: class_names.clone(),
    };
    let mut report = evaluate(&images, &metric_cfg);
    report.diagnostics.extend(extra_diagnostics);
    for skip in &skipped {
        report
            .diagnostics
            .push(format!("image {}: skipped: {}", skip.image_id, skip.reason));
    }
    Ok(PipelineOutcome { report, skipped })
}

/// Depth scale used for synthetic scene files: ramp depths are multiples of
/// 0.25, so they round-trip exactly through 16-bit storage.
pub const SYNTH_DEPTH_SCALE: f32 = 0.25;

/// Serializes a scene (depth, RoI, ground truth, planted detections, and a
/// ready-to-run config) into a directory.
pub fn write_scene_files(
    dir: impl AsRef<Path>,
    scene: &Scene,
    detections_seed: u64,
    class_names: &[String],
) -> Result<PipelineConfig, PipelineError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(FormatError::Io)?;
    let depth_dir = dir.join("depth");
    let roi_dir = dir.join("roi");
    std::fs::create_dir_all(&depth_dir).map_err(FormatError::Io)?;
    std::fs::create_dir_all(&roi_dir).map_err(FormatError::Io)?;

    let image_id = format!("scene_{:08}", scene.seed);
    formats::write_depth_png(
        depth_dir.join(format!("{image_id}.png")),
        &scene.depth_map(),
        SYNTH_DEPTH_SCALE,
    )?;
    formats::write_mask_png(roi_dir.join(format!("{image_id}.png")), &scene.roi_mask())?;

    let mut gt = formats::PerImage::new();
    gt.insert(image_id.clone(), scene.ground_truth());
    formats::write_ground_truth(dir.join("ground_truth.txt"), &gt, class_names)?;

    let mut dets = formats::PerImage::new();
    dets.insert(
        image_id,
        crate::synth::planted_detections(scene, detections_seed),
    );
    formats::write_detections(dir.join("detections.txt"), &dets, class_names)?;

    let config = PipelineConfig {
        depth: DepthSection {
            scale: SYNTH_DEPTH_SCALE,
        },
        dfr: DfrSection {
            enabled: true,
            ..DfrSection::default()
        },
        paths: PathsSection {
            detections: Some(dir.join("detections.txt")),
            ground_truth: Some(dir.join("ground_truth.txt")),
            depth_dir: Some(depth_dir),
            roi_dir: Some(roi_dir),
            report: Some(dir.join("report.txt")),
        },
        ..PipelineConfig::default()
    };
    std::fs::write(dir.join("config.toml"), config.to_toml()).map_err(FormatError::Io)?;
    Ok(config)
}

/// Wall-clock statistics over repeated runs of a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchStats {
    pub repetitions: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Measures a stage: 3 warm-up runs, then `repetitions` timed runs.
pub fn bench_runtime(mut stage: impl FnMut(), repetitions: usize) -> BenchStats {
    const WARMUPS: usize = 3;
    for _ in 0..WARMUPS {
        stage();
    }
    let repetitions = repetitions.max(1);
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        stage();
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let variance = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / samples.len() as f64;
    BenchStats {
        repetitions,
        mean_ms: mean,
        stddev_ms: variance.sqrt(),
        min_ms: samples.iter().cloned().fold(f64::INFINITY, f64::min),
        max_ms: samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}
