//! Acceptance suite: every release criterion with its pinned tolerance.
//!
//! Each test prints one `[acceptance] Cnn <name>: PASS/FAIL` line (visible
//! with `cargo test --test acceptance -- --nocapture`). Criteria share a
//! lock so timing-sensitive checks are not disturbed by parallel test
//! threads.

use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use detpost_core::depth::{dfr_filter_on_change_map, depth_change_map, flatness_proportion, DfrConfig};
use detpost_core::formats::render_report;
use detpost_core::geometry::{
    intersect_area, occupancy_target_approx_raw, occupancy_target_exact, BoundingBox, BoxSet,
};
use detpost_core::mask2box::{multi_threshold_boxes, quantile_thresholds};
use detpost_core::metrics::{evaluate, GtObject, ImageEval, MetricConfig};
use detpost_core::pipeline::{bench_runtime, run_pipeline, write_scene_files, PipelineConfig};
use detpost_core::raster::Raster;
use detpost_core::scoring::{
    bce_occupancy_grad, bce_occupancy_loss, budget_top_k, ood_recall_enhancement, Detection,
    FilterConfig, Label, Provenance, Selector,
};
use detpost_core::synth::{generate_scene, planted_detections, raster_occupancy_oracle, SceneParams};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn verdict(criterion: &str, ok: bool, detail: &str) {
    println!(
        "[acceptance] {criterion}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{criterion} failed: {detail}");
}

fn random_box(rng: &mut ChaCha8Rng, span: f64, min_size: f64, max_size: f64) -> BoundingBox {
    let x1 = rng.random_range(0.0..span);
    let y1 = rng.random_range(0.0..span);
    let w = rng.random_range(min_size..max_size);
    let h = rng.random_range(min_size..max_size);
    BoundingBox::new(x1, y1, x1 + w, y1 + h).unwrap()
}

/// Inclusion-exclusion union area for up to three boxes.
fn union_inclusion_exclusion(boxes: &[BoundingBox]) -> f64 {
    match boxes {
        [] => 0.0,
        [a] => a.area(),
        [a, b] => a.area() + b.area() - intersect_area(a, b),
        [a, b, c] => {
            let triple = a.intersection(b).map_or(0.0, |ab| intersect_area(&ab, c));
            a.area() + b.area() + c.area()
                - intersect_area(a, b)
                - intersect_area(a, c)
                - intersect_area(b, c)
                + triple
        }
        _ => unreachable!(),
    }
}

#[test]
fn c01_occupancy_exactness_against_raster_oracle() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240001);
    const RESOLUTION: usize = 512;
    let tolerance = 2.0 / RESOLUTION as f64;

    let mut max_oracle_diff = 0.0f64;
    let mut max_union_diff = 0.0f64;
    for _ in 0..1000 {
        let pred = random_box(&mut rng, 50.0, 1.0, 30.0);
        let n = rng.random_range(0..=3);
        let gts: Vec<BoundingBox> = (0..n)
            .map(|_| random_box(&mut rng, 60.0, 0.5, 35.0))
            .collect();
        let set = BoxSet::new(gts.clone());

        let exact = occupancy_target_exact(&pred, &set).unwrap();
        let sampled = raster_occupancy_oracle(&pred, &set, RESOLUTION);
        max_oracle_diff = max_oracle_diff.max((exact - sampled).abs());

        let union_diff = (set.union_area() - union_inclusion_exclusion(&gts)).abs();
        max_union_diff = max_union_diff.max(union_diff);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = max_oracle_diff <= tolerance && max_union_diff <= 1e-9 && elapsed < 10.0;
    verdict(
        "C01 occupancy-exactness",
        ok,
        &format!(
            "max |exact - oracle| = {max_oracle_diff:.3e} (tol {tolerance:.3e}), \
             max union diff = {max_union_diff:.3e} (tol 1e-9), {elapsed:.2}s (< 10s)"
        ),
    );
}

#[test]
fn c02_upper_bound_dominates_and_is_tight_when_disjoint() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(20240002);

    let mut violations = 0usize;
    for _ in 0..10_000 {
        let pred = random_box(&mut rng, 50.0, 1.0, 30.0);
        let n = rng.random_range(0..=5);
        let set = BoxSet::new(
            (0..n)
                .map(|_| random_box(&mut rng, 60.0, 0.5, 35.0))
                .collect(),
        );
        let exact = occupancy_target_exact(&pred, &set).unwrap();
        let raw = occupancy_target_approx_raw(&pred, &set).unwrap();
        if raw < exact - 1e-12 {
            violations += 1;
        }
    }

    // Disjoint vertical strips of the prediction: the bound is tight.
    let mut max_eq_diff = 0.0f64;
    for _ in 0..2_000 {
        let pred = BoundingBox::new(0.0, 0.0, 40.0, 20.0).unwrap();
        let mut cuts: Vec<f64> = (0..rng.random_range(0..=4))
            .map(|_| rng.random_range(1.0..39.0))
            .collect();
        cuts.push(0.0);
        cuts.push(40.0);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let gts: Vec<BoundingBox> = cuts
            .windows(2)
            .step_by(2)
            .filter(|pair| pair[1] > pair[0])
            .map(|pair| {
                let overhang = rng.random_range(0.0..10.0);
                BoundingBox::new(pair[0], -overhang, pair[1], 20.0 + overhang).unwrap()
            })
            .collect();
        let set = BoxSet::new(gts);
        let exact = occupancy_target_exact(&pred, &set).unwrap();
        let raw = occupancy_target_approx_raw(&pred, &set).unwrap();
        max_eq_diff = max_eq_diff.max((raw - exact).abs());
    }
    let ok = violations == 0 && max_eq_diff <= 1e-12;
    verdict(
        "C02 occupancy-upper-bound",
        ok,
        &format!(
            "{violations} dominance violations in 10000 cases, \
             max |approx - exact| on disjoint cases = {max_eq_diff:.3e} (tol 1e-12)"
        ),
    );
}

#[test]
fn c03_gradient_matches_central_differences() {
    let _guard = serial();
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for bi in 1..=19 {
        for ti in 1..=19 {
            let b = bi as f64 * 0.05;
            let t = ti as f64 * 0.05;
            let analytic = bce_occupancy_grad(b, t);
            let fd = (bce_occupancy_loss(b + h, t) - bce_occupancy_loss(b - h, t)) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    let ok = max_rel <= 1e-6;
    verdict(
        "C03 loss-gradient",
        ok,
        &format!("max relative error {max_rel:.3e} over the 19x19 grid (tol 1e-6)"),
    );
}

#[test]
fn c04_depth_filter_on_100_scenes() {
    let _guard = serial();
    let params = SceneParams::default();
    let cfg = DfrConfig::default();
    assert_eq!(cfg.mu, 0.3);

    let mut total_objects = 0usize;
    let mut kept_objects = 0usize;
    let mut total_ghosts = 0usize;
    let mut rejected_ghosts = 0usize;
    let mut monotone = true;

    for seed in 0..100u64 {
        let scene = generate_scene(&params, seed);
        let depth = scene.depth_map();
        let c_map = depth_change_map(&depth, &cfg).unwrap();

        for obj in &scene.objects {
            total_objects += 1;
            if flatness_proportion(&c_map, &obj.bbox, &cfg).unwrap() >= cfg.mu {
                kept_objects += 1;
            }
        }
        for ghost in &scene.ghosts {
            total_ghosts += 1;
            if flatness_proportion(&c_map, ghost, &cfg).unwrap() < cfg.mu {
                rejected_ghosts += 1;
            }
        }

        // Acceptance set shrinks monotonically over the mu sweep.
        let dets = planted_detections(&scene, seed ^ 0x5EED);
        let mut previous: Option<Vec<Detection>> = None;
        for step in 0..=7 {
            let sweep = DfrConfig {
                mu: 0.1 * step as f64 + if step == 7 { 0.05 } else { 0.0 }, // 0, .1, ..., .6, .75
                ..cfg
            };
            let kept = dfr_filter_on_change_map(&dets, &c_map, &sweep).kept;
            if let Some(prev) = &previous {
                if !kept.iter().all(|d| prev.contains(d)) {
                    monotone = false;
                }
            }
            previous = Some(kept);
        }
    }

    let ghost_rejection = rejected_ghosts as f64 / total_ghosts as f64;
    let ok = kept_objects == total_objects && ghost_rejection >= 0.95 && monotone;
    verdict(
        "C04 depth-filter-behavior",
        ok,
        &format!(
            "objects kept {kept_objects}/{total_objects} (need all), \
             ghosts rejected {rejected_ghosts}/{total_ghosts} = {:.1}% (need >= 95%), \
             monotone over mu sweep: {monotone}",
            100.0 * ghost_rejection
        ),
    );
}

/// In-memory filter -> depth-filter -> budget -> evaluate over one scene.
fn evaluate_scene(scene_seed: u64, dfr_enabled: bool, k: usize) -> (Option<f64>, Option<f64>) {
    let params = SceneParams {
        width: 640,
        height: 512,
        horizon: 64,
        objects: 6,
        ghosts: 10,
        ood_fraction: 1.0,
        ..SceneParams::default()
    };
    let scene = generate_scene(&params, scene_seed);
    let depth = scene.depth_map();
    let filter_cfg = FilterConfig::default();
    let dfr_cfg = DfrConfig::default();

    let mut dets = ood_recall_enhancement(&planted_detections(&scene, scene_seed ^ 0xF00D), &filter_cfg);
    if dfr_enabled {
        let c_map = depth_change_map(&depth, &dfr_cfg).unwrap();
        dets = dfr_filter_on_change_map(&dets, &c_map, &dfr_cfg).kept;
    }
    let dets = budget_top_k(&dets, filter_cfg.budget, Selector::All);
    let image = ImageEval {
        id: format!("scene{scene_seed}"),
        dets,
        gts: scene.ground_truth(),
        roi: Some(scene.roi_mask()),
    };
    let cfg = MetricConfig {
        k,
        iou_thr: 0.5,
        class_names: PipelineConfig::default().labels.known,
    };
    let report = evaluate(&[image], &cfg);
    (report.recall_at_k, report.fpr_at_k)
}

#[test]
fn c05_depth_filter_improves_fpr_without_hurting_recall() {
    let _guard = serial();
    let mut all_ok = true;
    let mut detail = String::new();
    for seed in [501u64, 502, 503, 504, 505] {
        // Budget below the ghost count: rejected ghosts free slots.
        let (recall_off, fpr_off) = evaluate_scene(seed, false, 5);
        let (recall_on, fpr_on) = evaluate_scene(seed, true, 5);
        let fpr_drops = fpr_on.unwrap() < fpr_off.unwrap();
        let recall_holds = recall_on.unwrap() >= recall_off.unwrap();
        if !(fpr_drops && recall_holds) {
            all_ok = false;
        }
        detail.push_str(&format!(
            "seed {seed}: FPR {:.1} -> {:.1}, R {:.1} -> {:.1}; ",
            fpr_off.unwrap(),
            fpr_on.unwrap(),
            recall_off.unwrap(),
            recall_on.unwrap()
        ));
    }
    verdict("C05 depth-filter-direction", all_ok, detail.trim_end());
}

#[test]
fn c06_filter_cascade_matches_set_definition() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(20240006);
    let cfg = FilterConfig::default();
    assert_eq!((cfg.mu_sco, cfg.mu_occ), (0.01, 0.01));

    let dets: Vec<Detection> = (0..10_000)
        .map(|_| {
            // Half the scores land near the thresholds.
            let sco = if rng.random_bool(0.5) {
                rng.random_range(0.0..0.03)
            } else {
                rng.random_range(0.0..1.0)
            };
            let occ = if rng.random_bool(0.5) {
                rng.random_range(0.0..0.03)
            } else {
                rng.random_range(0.0..1.0)
            };
            Detection {
                bbox: random_box(&mut rng, 50.0, 1.0, 20.0),
                class_scores: Vec::new(),
                sco,
                occ,
                label: Label::Known(0),
                provenance: Provenance::Standard,
            }
        })
        .collect();

    let out = ood_recall_enhancement(&dets, &cfg);
    let expected: Vec<&Detection> = dets
        .iter()
        .filter(|d| d.sco >= cfg.mu_sco || (d.sco < cfg.mu_sco && d.occ >= cfg.mu_occ))
        .collect();
    let mut ok = out.len() == expected.len();
    if ok {
        for (got, want) in out.iter().zip(&expected) {
            let branch_ok = if want.sco >= cfg.mu_sco {
                got.provenance == Provenance::Standard && got.label == want.label
            } else {
                got.provenance == Provenance::RecallEnhanced && got.label.is_ood()
            };
            if got.bbox != want.bbox || !branch_ok {
                ok = false;
                break;
            }
        }
    }
    verdict(
        "C06 filtering-semantics",
        ok,
        &format!("{} of 10000 detections kept, set-theoretic match", out.len()),
    );
}

fn fixture_det(bbox: BoundingBox, sco: f64, label: Label) -> Detection {
    Detection {
        bbox,
        class_scores: Vec::new(),
        sco,
        occ: sco,
        label,
        provenance: Provenance::Standard,
    }
}

fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

#[test]
fn c07_metric_oracle_fixture() {
    let _guard = serial();
    let car = Label::Known(0);
    let person = Label::Known(1);
    let full_roi = || Raster::filled(64, 64, true);

    // Image 1: car TP, matched unknown, one in-RoI unknown FP.
    let img1 = ImageEval {
        id: "img1".into(),
        dets: vec![
            fixture_det(bb(0.0, 0.0, 10.0, 10.0), 0.9, car),
            fixture_det(bb(20.0, 20.0, 30.0, 30.0), 0.8, Label::Ood),
            fixture_det(bb(45.0, 45.0, 55.0, 55.0), 0.7, Label::Ood),
        ],
        gts: vec![
            GtObject { bbox: bb(0.0, 0.0, 10.0, 10.0), label: car },
            GtObject { bbox: bb(20.0, 20.0, 30.0, 30.0), label: Label::Ood },
        ],
        roi: Some(full_roi()),
    };

    // Image 2: person TP(0.95), person FP(0.9), person TP(0.5); one matched
    // unknown, one missed unknown, one in-RoI unknown FP.
    let img2 = ImageEval {
        id: "img2".into(),
        dets: vec![
            fixture_det(bb(5.0, 5.0, 15.0, 15.0), 0.95, person),
            fixture_det(bb(45.0, 20.0, 55.0, 30.0), 0.9, person),
            fixture_det(bb(30.0, 30.0, 40.0, 40.0), 0.5, person),
            fixture_det(bb(50.0, 5.0, 60.0, 15.0), 0.6, Label::Ood),
            fixture_det(bb(20.0, 50.0, 30.0, 60.0), 0.55, Label::Ood),
        ],
        gts: vec![
            GtObject { bbox: bb(5.0, 5.0, 15.0, 15.0), label: person },
            GtObject { bbox: bb(30.0, 30.0, 40.0, 40.0), label: person },
            GtObject { bbox: bb(50.0, 5.0, 60.0, 15.0), label: Label::Ood },
            GtObject { bbox: bb(5.0, 40.0, 15.0, 50.0), label: Label::Ood },
        ],
        roi: Some(full_roi()),
    };

    // Image 3: no RoI (skipped for FPR); car TP at IoU exactly 0.5; one
    // unmatched unknown det that therefore counts nowhere.
    let img3 = ImageEval {
        id: "img3".into(),
        dets: vec![
            fixture_det(bb(0.0, 0.0, 10.0, 5.0), 0.6, car),
            fixture_det(bb(40.0, 40.0, 50.0, 50.0), 0.9, Label::Ood),
        ],
        gts: vec![
            GtObject { bbox: bb(0.0, 0.0, 10.0, 10.0), label: car },
            GtObject { bbox: bb(20.0, 20.0, 30.0, 30.0), label: Label::Ood },
        ],
        roi: None,
    };

    let cfg = MetricConfig {
        k: 100,
        iou_thr: 0.5,
        class_names: vec!["car".into(), "person".into()],
    };
    let report = evaluate(&[img1, img2, img3], &cfg);

    // Hand-computed: 2 of 4 unknown GT matched; 2 FPs over 2 RoI images;
    // AP50(car) = 100 (two TPs, no FP); AP50(person) from the PR curve
    // (1, 0.5), (0.5, 0.5), (2/3, 1.0) -> (51 + 50 * 2/3) / 101.
    let expected_recall = 50.0;
    let expected_fpr = 1000.0 * 2.0 / 200.0;
    let expected_ap50_person = 100.0 * (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;

    let recall = report.recall_at_k.unwrap();
    let fpr = report.fpr_at_k.unwrap();
    let ap50_car = report.per_class[0].ap50.unwrap();
    let ap50_person = report.per_class[1].ap50.unwrap();

    let ok = (recall - expected_recall).abs() < 1e-9
        && (fpr - expected_fpr).abs() < 1e-9
        && (ap50_car - 100.0).abs() < 1e-9
        && (ap50_person - expected_ap50_person).abs() < 1e-9
        && report.total_unknown_gt == 4
        && report.matched_unknown_gt == 2;
    verdict(
        "C07 metric-oracle",
        ok,
        &format!(
            "R@100 {recall} (want {expected_recall}), FPR@100 {fpr} (want {expected_fpr}), \
             AP50 car {ap50_car} (want 100), AP50 person {ap50_person:.6} \
             (want {expected_ap50_person:.6})"
        ),
    );
}

#[test]
fn c08_mask2box_fixtures() {
    let _guard = serial();
    // Constant map: only the lower threshold fires, one full-image box.
    let constant = Raster::from_fn(24, 16, |_, _| 0.7f32);
    let dets = multi_threshold_boxes(&constant, &[0.5, 0.9]).unwrap();
    let constant_ok = dets.len() == 1
        && dets[0].sco == 0.5
        && dets[0].bbox == bb(0.0, 0.0, 24.0, 16.0)
        && dets[0].label.is_ood();

    // Gaussian bump: nested, monotonically shrinking boxes over a
    // 16-threshold grid.
    let bump = Raster::from_fn(48, 48, |x, y| {
        let dx = x as f64 - 24.0;
        let dy = y as f64 - 24.0;
        (-(dx * dx + dy * dy) / (2.0 * 8.0 * 8.0)).exp() as f32
    });
    let grid = quantile_thresholds(&bump, 16);
    let bump_dets = multi_threshold_boxes(&bump, &grid).unwrap();
    let mut nested_ok = bump_dets.len() == grid.len();
    for pair in bump_dets.windows(2) {
        let (outer, inner) = (&pair[0].bbox, &pair[1].bbox);
        nested_ok &= inner.x1 >= outer.x1
            && inner.y1 >= outer.y1
            && inner.x2 <= outer.x2
            && inner.y2 <= outer.y2
            && inner.area() <= outer.area();
    }
    let ok = constant_ok && nested_ok;
    verdict(
        "C08 mask2box",
        ok,
        &format!(
            "constant-map box exact: {constant_ok}; {} nested boxes monotone: {nested_ok}",
            bump_dets.len()
        ),
    );
}

#[test]
fn c09_determinism_of_pipeline_and_mosaic() {
    let _guard = serial();
    use detpost_core::augment::{mosaic_plus, MappedLabeledImage};
    use image::RgbImage;

    // Pipeline: byte-identical reports over identical files.
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&SceneParams::default(), 909);
    let cfg = write_scene_files(
        dir.path(),
        &scene,
        910,
        &PipelineConfig::default().labels.known,
    )
    .unwrap();
    let report_a = render_report(&run_pipeline(&cfg).unwrap().report);
    let report_b = render_report(&run_pipeline(&cfg).unwrap().report);
    let pipeline_ok = report_a == report_b;

    // Mosaic: bit-identical raster and annotations for a fixed seed.
    let tile = |w: u32, h: u32, shade: u8| MappedLabeledImage {
        pixels: RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([shade, (x % 256) as u8, (y % 256) as u8])
        }),
        annotations: vec![(bb(2.0, 2.0, w as f64 - 2.0, h as f64 - 2.0), Label::Ood)],
        source: format!("tile{shade}"),
    };
    let (a, b, c, d) = (tile(40, 30, 1), tile(64, 64, 2), tile(50, 50, 3), tile(32, 48, 4));
    let m1 = mosaic_plus([&a, &b], [&c, &d], (128, 96), 4242).unwrap();
    let m2 = mosaic_plus([&a, &b], [&c, &d], (128, 96), 4242).unwrap();
    let mosaic_ok = m1.pixels.as_raw() == m2.pixels.as_raw() && m1.annotations == m2.annotations;

    let ok = pipeline_ok && mosaic_ok;
    verdict(
        "C09 determinism",
        ok,
        &format!("pipeline byte-identical: {pipeline_ok}, mosaic bit-identical: {mosaic_ok}"),
    );
}

#[test]
fn c10_depth_filter_latency_budget() {
    let _guard = serial();
    let cfg = DfrConfig::default();
    // 2048x1024 perspective-like depth with some structure.
    let depth = Raster::from_fn(2048, 1024, |x, y| {
        200.0 - 0.15 * y as f32 + ((x / 97) % 7) as f32 * 0.5
    });
    let mut rng = ChaCha8Rng::seed_from_u64(20240010);
    let boxes: Vec<BoundingBox> = (0..100)
        .map(|_| {
            let x1 = rng.random_range(0.0..1900.0);
            let y1 = rng.random_range(0.0..900.0);
            BoundingBox::new(
                x1,
                y1,
                x1 + rng.random_range(20.0..140.0),
                y1 + rng.random_range(20.0..120.0),
            )
            .unwrap()
        })
        .collect();

    let stats = bench_runtime(
        || {
            let c_map = depth_change_map(&depth, &cfg).unwrap();
            for bbox in &boxes {
                std::hint::black_box(flatness_proportion(&c_map, bbox, &cfg).unwrap());
            }
        },
        10,
    );
    let ok = stats.mean_ms < 50.0;
    verdict(
        "C10 latency-budget",
        ok,
        &format!(
            "change map + 100 box evaluations on 2048x1024: mean {:.1} ms \
             (min {:.1}, max {:.1}, n=10, budget 50 ms)",
            stats.mean_ms, stats.min_ms, stats.max_ms
        ),
    );
}
