//! `detpost` — detection post-processing and benchmarking CLI.
//!
//! Subcommands mirror the pipeline stages: `filter` (score filter + OOD
//! recall enhancement), `dfr` (depth-based false-positive reduction),
//! `mask2box` (anomaly score maps to box detections), `eval` (full pipeline
//! plus metrics report), `augment` (mosaic + mixup composition), `synth`
//! (synthetic scene generation) and `bench` (stage runtime measurement).
//!
//! Exit codes: 0 on clean success, 1 when individual items were skipped,
//! 2 on fatal configuration or I/O errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use detpost_core::augment::{mixup_blend, mosaic_plus, remap_labels, LabelSpaceMap, RawLabeledImage};
use detpost_core::depth::dfr_filter;
use detpost_core::formats;
use detpost_core::mask2box::{multi_threshold_boxes, quantile_thresholds};
use detpost_core::metrics::GtObject;
use detpost_core::pipeline::{
    bench_runtime, run_pipeline, write_scene_files, BenchStats, PipelineConfig,
};
use detpost_core::scoring::ood_recall_enhancement;
use detpost_core::synth::{generate_scene, planted_detections, SceneParams};

#[derive(Parser)]
#[command(name = "detpost", version, about = "Open-world detection post-processing toolkit")]
struct Cli {
    /// Pipeline configuration file (TOML). Command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply the score filter and OOD recall enhancement to a detections file.
    Filter {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Override the standard score threshold.
        #[arg(long)]
        mu_sco: Option<f64>,
        /// Override the occupancy rescue threshold.
        #[arg(long)]
        mu_occ: Option<f64>,
    },
    /// Depth-based false-positive reduction for one image.
    Dfr {
        #[arg(long)]
        detections: PathBuf,
        /// Depth map (16-bit PNG or PGM).
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Image id to filter; defaults to the only image in the file.
        #[arg(long)]
        image_id: Option<String>,
        /// Override the flatness acceptance threshold.
        #[arg(long)]
        mu: Option<f64>,
        /// Override the depth scale factor.
        #[arg(long)]
        depth_scale: Option<f32>,
    },
    /// Convert a per-pixel anomaly score map into scored OOD detections.
    Mask2box {
        /// Score map (.dsm container or 16-bit PNG).
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Image id for the emitted records.
        #[arg(long, default_value = "image")]
        image_id: String,
        /// Explicit thresholds (comma-separated); default: quantile grid.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f32>,
    },
    /// Run filter -> optional depth filter -> budget -> metrics, and write
    /// the evaluation report.
    Eval {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Directory of per-image depth maps (<image_id>.png/.pgm).
        #[arg(long)]
        depth_dir: Option<PathBuf>,
        /// Directory of per-image RoI masks (<image_id>.png/.pgm).
        #[arg(long)]
        roi_dir: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Enable the depth filter (requires --depth-dir or config paths).
        #[arg(long, conflicts_with = "no_dfr")]
        dfr: bool,
        /// Disable the depth filter even if the config enables it.
        #[arg(long)]
        no_dfr: bool,
    },
    /// Compose a four-tile mosaic from two driving and two auxiliary images,
    /// then optionally mixup-blend a further driving image on top.
    Augment {
        /// Driving-set image (give twice).
        #[arg(long = "ad-image")]
        ad_images: Vec<PathBuf>,
        /// Annotations for each driving image (give twice).
        #[arg(long = "ad-ann")]
        ad_anns: Vec<PathBuf>,
        /// Auxiliary-set image (give twice).
        #[arg(long = "ood-image")]
        ood_images: Vec<PathBuf>,
        /// Annotations for each auxiliary image (give twice).
        #[arg(long = "ood-ann")]
        ood_anns: Vec<PathBuf>,
        /// Extra driving image for the mixup blend.
        #[arg(long)]
        mixup_image: Option<PathBuf>,
        #[arg(long)]
        mixup_ann: Option<PathBuf>,
        /// Canvas size as WIDTHxHEIGHT; default from config.
        #[arg(long)]
        canvas: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output composite image (PNG/JPEG by extension).
        #[arg(long)]
        output: PathBuf,
        /// Output annotations file.
        #[arg(long)]
        output_annotations: PathBuf,
    },
    /// Generate a synthetic scene: depth map, RoI mask, ground truth,
    /// planted detections and a ready-to-run config.
    Synth {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        ghosts: Option<usize>,
    },
    /// Measure a stage's runtime: 3 warm-ups, then timed repetitions.
    Bench {
        #[arg(long, value_enum)]
        stage: Stage,
        #[arg(long, default_value_t = 100)]
        repetitions: usize,
        #[arg(long, default_value_t = 2048)]
        width: usize,
        #[arg(long, default_value_t = 1024)]
        height: usize,
        /// Number of boxes evaluated per repetition (dfr stage).
        #[arg(long, default_value_t = 100)]
        boxes: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Filter,
    Dfr,
    Mask2box,
    Eval,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let mut cfg = load_config(&cli.config)?;

    match cli.command {
        Command::Filter {
            detections,
            output,
            mu_sco,
            mu_occ,
        } => {
            if let Some(v) = mu_sco {
                cfg.filter.mu_sco = v;
            }
            if let Some(v) = mu_occ {
                cfg.filter.mu_occ = v;
            }
            let loaded = formats::load_detections(&detections, &cfg.labels.known)?;
            for warning in &loaded.warnings {
                eprintln!("warning: {warning}");
            }
            let filter_cfg = cfg.filter.to_filter_config();
            let mut kept_total = 0usize;
            let mut input_total = 0usize;
            let filtered: formats::PerImage<_> = loaded
                .per_image
                .iter()
                .map(|(id, dets)| {
                    input_total += dets.len();
                    let kept = ood_recall_enhancement(dets, &filter_cfg);
                    kept_total += kept.len();
                    (id.clone(), kept)
                })
                .collect();
            formats::write_detections(&output, &filtered, &cfg.labels.known)?;
            println!("kept {kept_total} of {input_total} detections -> {}", output.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Dfr {
            detections,
            depth,
            output,
            image_id,
            mu,
            depth_scale,
        } => {
            if let Some(v) = mu {
                cfg.dfr.mu = v;
            }
            if let Some(v) = depth_scale {
                cfg.depth.scale = v;
            }
            let dfr_cfg = cfg.dfr.to_dfr_config();
            dfr_cfg.validate()?;

            let loaded = formats::load_detections(&detections, &cfg.labels.known)?;
            let image_id = match image_id {
                Some(id) => id,
                None => {
                    if loaded.per_image.len() != 1 {
                        bail!(
                            "{} contains {} images; pass --image-id",
                            detections.display(),
                            loaded.per_image.len()
                        );
                    }
                    loaded.per_image.keys().next().unwrap().clone()
                }
            };
            let dets = loaded
                .per_image
                .get(&image_id)
                .with_context(|| format!("image {image_id:?} not present in detections"))?;
            let depth_map = formats::load_depth(&depth, cfg.depth.scale)?;
            let outcome = dfr_filter(dets, &depth_map, &dfr_cfg)?;
            for (idx, err) in &outcome.errors {
                eprintln!("warning: detection {idx}: {err}");
            }

            let mut out = formats::PerImage::new();
            out.insert(image_id, outcome.kept.clone());
            formats::write_detections(&output, &out, &cfg.labels.known)?;
            println!(
                "kept {} rejected {} errored {} -> {}",
                outcome.kept.len(),
                outcome.rejected.len(),
                outcome.errors.len(),
                output.display()
            );
            Ok(if outcome.errors.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }

        Command::Mask2box {
            scores,
            output,
            image_id,
            thresholds,
        } => {
            let score_map = formats::load_score_map(&scores, cfg.mask2box.png_scale)?;
            let grid = if !thresholds.is_empty() {
                thresholds
            } else if !cfg.mask2box.thresholds.is_empty() {
                cfg.mask2box.thresholds.clone()
            } else {
                quantile_thresholds(&score_map, cfg.mask2box.quantiles)
            };
            let dets = multi_threshold_boxes(&score_map, &grid)
                .map_err(|e| anyhow::anyhow!(e.to_string()))?;
            let mut out = formats::PerImage::new();
            let count = dets.len();
            out.insert(image_id, dets);
            formats::write_detections(&output, &out, &cfg.labels.known)?;
            println!(
                "{count} detections from {} thresholds -> {}",
                grid.len(),
                output.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Eval {
            detections,
            ground_truth,
            depth_dir,
            roi_dir,
            report,
            dfr,
            no_dfr,
        } => {
            if detections.is_some() {
                cfg.paths.detections = detections;
            }
            if ground_truth.is_some() {
                cfg.paths.ground_truth = ground_truth;
            }
            if depth_dir.is_some() {
                cfg.paths.depth_dir = depth_dir;
            }
            if roi_dir.is_some() {
                cfg.paths.roi_dir = roi_dir;
            }
            if report.is_some() {
                cfg.paths.report = report;
            }
            if dfr {
                cfg.dfr.enabled = true;
            }
            if no_dfr {
                cfg.dfr.enabled = false;
            }

            let outcome = run_pipeline(&cfg)?;
            let text = formats::render_report(&outcome.report);
            match &cfg.paths.report {
                Some(path) => {
                    std::fs::write(path, &text)
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("report -> {}", path.display());
                }
                None => print!("{text}"),
            }
            for skip in &outcome.skipped {
                eprintln!("skipped image {}: {}", skip.image_id, skip.reason);
            }
            Ok(if outcome.skipped.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }

        Command::Augment {
            ad_images,
            ad_anns,
            ood_images,
            ood_anns,
            mixup_image,
            mixup_ann,
            canvas,
            seed,
            output,
            output_annotations,
        } => {
            if ad_images.len() != 2 || ood_images.len() != 2 {
                bail!("augment needs exactly two --ad-image and two --ood-image");
            }
            if ad_anns.len() != ad_images.len() || ood_anns.len() != ood_images.len() {
                bail!("each image needs a matching annotations file");
            }
            let canvas = match canvas {
                Some(value) => parse_canvas(&value)?,
                None => (cfg.augment.canvas_width, cfg.augment.canvas_height),
            };

            let label_map = LabelSpaceMap::new(cfg.labels.known.clone());
            let load = |img: &PathBuf, ann: &PathBuf| -> Result<_> {
                let raw = load_raw_image(img, ann)?;
                remap_labels(&raw, &label_map).map_err(|e| anyhow::anyhow!(e.to_string()))
            };
            let ad0 = load(&ad_images[0], &ad_anns[0])?;
            let ad1 = load(&ad_images[1], &ad_anns[1])?;
            let ood0 = load(&ood_images[0], &ood_anns[0])?;
            let ood1 = load(&ood_images[1], &ood_anns[1])?;

            let mut composite = mosaic_plus([&ad0, &ad1], [&ood0, &ood1], canvas, seed)
                .map_err(|e| anyhow::anyhow!(e.to_string()))?;

            if let Some(mix_path) = mixup_image {
                let ann = mixup_ann
                    .as_ref()
                    .context("--mixup-image requires --mixup-ann")?;
                let extra = load(&mix_path, ann)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6D69787570);
                let lambda = rng.random_range(cfg.augment.lambda_min..=cfg.augment.lambda_max);
                composite = mixup_blend(&composite, &extra, lambda);
                println!("mixup lambda {lambda:.4}");
            }

            composite
                .pixels
                .save(&output)
                .with_context(|| format!("writing {}", output.display()))?;
            let image_id = output
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("composite")
                .to_string();
            let mut gt = formats::PerImage::new();
            gt.insert(
                image_id,
                composite
                    .annotations
                    .iter()
                    .map(|(bbox, label)| GtObject { bbox: *bbox, label: *label })
                    .collect(),
            );
            formats::write_ground_truth(&output_annotations, &gt, &cfg.labels.known)?;
            println!(
                "composite {}x{} with {} annotations -> {}",
                canvas.0,
                canvas.1,
                composite.annotations.len(),
                output.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Synth {
            output_dir,
            seed,
            width,
            height,
            objects,
            ghosts,
        } => {
            let mut params = SceneParams::default();
            if let Some(v) = width {
                params.width = v;
            }
            if let Some(v) = height {
                params.height = v;
            }
            if let Some(v) = objects {
                params.objects = v;
            }
            if let Some(v) = ghosts {
                params.ghosts = v;
            }
            params.known_classes = cfg.labels.known.len();
            let scene = generate_scene(&params, seed);
            write_scene_files(&output_dir, &scene, seed ^ 0xDE7EC7, &cfg.labels.known)?;
            println!(
                "scene with {} objects and {} ghosts -> {}",
                scene.objects.len(),
                scene.ghosts.len(),
                output_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Bench {
            stage,
            repetitions,
            width,
            height,
            boxes,
        } => {
            let stats = run_bench(stage, repetitions, width, height, boxes, &cfg)?;
            println!(
                "mean {:.3} ms  stddev {:.3} ms  min {:.3} ms  max {:.3} ms  (n={})",
                stats.mean_ms, stats.stddev_ms, stats.min_ms, stats.max_ms, stats.repetitions
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_canvas(value: &str) -> Result<(u32, u32)> {
    let (w, h) = value
        .split_once('x')
        .with_context(|| format!("canvas {value:?} is not WIDTHxHEIGHT"))?;
    Ok((w.parse()?, h.parse()?))
}

fn load_raw_image(img_path: &Path, ann_path: &Path) -> Result<RawLabeledImage> {
    let pixels = image::open(img_path)
        .with_context(|| format!("loading {}", img_path.display()))?
        .to_rgb8();
    let annotations = formats::load_raw_annotations(ann_path)?
        .into_iter()
        .collect();
    Ok(RawLabeledImage {
        pixels,
        annotations,
        source: img_path.display().to_string(),
    })
}

fn run_bench(
    stage: Stage,
    repetitions: usize,
    width: usize,
    height: usize,
    boxes: usize,
    cfg: &PipelineConfig,
) -> Result<BenchStats> {
    use detpost_core::depth::{depth_change_map, flatness_proportion};
    use detpost_core::geometry::BoundingBox;
    use detpost_core::metrics::{evaluate, ImageEval, MetricConfig};
    use detpost_core::raster::Raster;
    use detpost_core::scoring::{budget_top_k, Selector};

    let mut rng = ChaCha8Rng::seed_from_u64(0xBE7C);
    Ok(match stage {
        Stage::Dfr => {
            let dfr_cfg = cfg.dfr.to_dfr_config();
            dfr_cfg.validate()?;
            let depth = Raster::from_fn(width, height, |x, y| {
                200.0 - 0.15 * y as f32 + ((x / 97) % 7) as f32 * 0.5
            });
            let rects: Vec<BoundingBox> = (0..boxes)
                .map(|_| {
                    let x1 = rng.random_range(0.0..width as f64 * 0.9);
                    let y1 = rng.random_range(0.0..height as f64 * 0.9);
                    BoundingBox::new(
                        x1,
                        y1,
                        (x1 + rng.random_range(10.0..120.0)).min(width as f64),
                        (y1 + rng.random_range(10.0..120.0)).min(height as f64),
                    )
                    .unwrap()
                })
                .collect();
            bench_runtime(
                || {
                    let c_map = depth_change_map(&depth, &dfr_cfg).unwrap();
                    for bbox in &rects {
                        std::hint::black_box(
                            flatness_proportion(&c_map, bbox, &dfr_cfg).unwrap(),
                        );
                    }
                },
                repetitions,
            )
        }
        Stage::Filter => {
            let scene = generate_scene(
                &SceneParams {
                    objects: 20,
                    ghosts: 20,
                    width: width.max(640),
                    height: height.max(512),
                    ..SceneParams::default()
                },
                1,
            );
            let dets = planted_detections(&scene, 2);
            let filter_cfg = cfg.filter.to_filter_config();
            bench_runtime(
                || {
                    std::hint::black_box(ood_recall_enhancement(&dets, &filter_cfg));
                },
                repetitions,
            )
        }
        Stage::Mask2box => {
            let scores = Raster::from_fn(width, height, |x, y| {
                let dx = x as f64 - width as f64 / 2.0;
                let dy = y as f64 - height as f64 / 2.0;
                (-(dx * dx + dy * dy) / (2.0 * (width as f64 / 8.0).powi(2))).exp() as f32
            });
            let grid = quantile_thresholds(&scores, cfg.mask2box.quantiles);
            bench_runtime(
                || {
                    std::hint::black_box(multi_threshold_boxes(&scores, &grid).unwrap());
                },
                repetitions,
            )
        }
        Stage::Eval => {
            let scene = generate_scene(&SceneParams::default(), 3);
            let dets = budget_top_k(
                &ood_recall_enhancement(
                    &planted_detections(&scene, 4),
                    &cfg.filter.to_filter_config(),
                ),
                cfg.filter.budget,
                Selector::All,
            );
            let image = ImageEval {
                id: "bench".into(),
                dets,
                gts: scene.ground_truth(),
                roi: Some(scene.roi_mask()),
            };
            let metric_cfg = MetricConfig {
                k: cfg.metrics.k,
                iou_thr: cfg.metrics.iou_thr,
                class_names: cfg.labels.known.clone(),
            };
            bench_runtime(
                || {
                    std::hint::black_box(evaluate(
                        std::slice::from_ref(&image),
                        &metric_cfg,
                    ));
                },
                repetitions,
            )
        }
    })
}
