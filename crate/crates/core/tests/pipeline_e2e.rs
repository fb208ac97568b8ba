//! File-based end-to-end runs of the pipeline on synthetic scenes, checked
//! against values derived from the scene construction itself.

use detpost_core::formats::render_report;
use detpost_core::pipeline::{run_pipeline, write_scene_files, PipelineConfig};
use detpost_core::scoring::Label;
use detpost_core::synth::{generate_scene, SceneParams};
use tempfile::tempdir;

fn class_names() -> Vec<String> {
    PipelineConfig::default().labels.known
}

#[test]
fn pipeline_matches_scene_oracle_end_to_end() {
    let dir = tempdir().unwrap();
    let params = SceneParams::default();
    let scene = generate_scene(&params, 301);
    assert!(!scene.objects.is_empty() && !scene.ghosts.is_empty());

    let cfg = write_scene_files(dir.path(), &scene, 77, &class_names()).unwrap();
    let outcome = run_pipeline(&cfg).unwrap();
    assert!(outcome.skipped.is_empty());
    let report = outcome.report;

    // Every planted detection sits exactly on its object, so with the depth
    // filter removing all ghosts and keeping all objects:
    let unknown_gt = scene.objects.iter().filter(|o| o.label.is_ood()).count();
    assert_eq!(report.total_unknown_gt, unknown_gt);
    if unknown_gt > 0 {
        assert_eq!(report.recall_at_k, Some(100.0));
        assert_eq!(report.matched_unknown_gt, unknown_gt);
    }
    assert_eq!(report.fpr_at_k, Some(0.0));

    // Known classes present in the scene score perfect AP.
    let known_classes: std::collections::BTreeSet<usize> = scene
        .objects
        .iter()
        .filter_map(|o| match o.label {
            Label::Known(c) => Some(c),
            Label::Ood => None,
        })
        .collect();
    for class in &report.per_class {
        if known_classes.contains(&class.class) {
            assert_eq!(class.ap, Some(100.0));
            assert_eq!(class.ap50, Some(100.0));
        } else {
            assert_eq!(class.ap, None);
        }
    }
    if !known_classes.is_empty() {
        assert_eq!(report.map_known, Some(100.0));
    }
}

#[test]
fn pipeline_without_dfr_counts_ghosts_as_false_positives() {
    let dir = tempdir().unwrap();
    let scene = generate_scene(&SceneParams::default(), 302);
    let mut cfg = write_scene_files(dir.path(), &scene, 78, &class_names()).unwrap();
    cfg.dfr.enabled = false;

    let report = run_pipeline(&cfg).unwrap().report;
    // One image; each ghost detection matches nothing and lies on the road.
    let expected = 1000.0 * scene.ghosts.len() as f64 / 100.0;
    assert_eq!(report.fpr_at_k, Some(expected));
}

#[test]
fn enabling_dfr_reduces_fpr_and_never_recall() {
    // Tight budgets turn ghost suppression into recall: rejected ghosts free
    // budget slots for true unknown detections.
    let params = SceneParams {
        width: 640,
        height: 512,
        horizon: 64,
        objects: 6,
        ghosts: 10,
        ood_fraction: 1.0,
        ..SceneParams::default()
    };
    for seed in [401u64, 402, 403] {
        let dir = tempdir().unwrap();
        let scene = generate_scene(&params, seed);
        let mut cfg = write_scene_files(dir.path(), &scene, seed ^ 0xF00D, &class_names()).unwrap();
        cfg.metrics.k = 5;

        cfg.dfr.enabled = false;
        let off = run_pipeline(&cfg).unwrap().report;
        cfg.dfr.enabled = true;
        let on = run_pipeline(&cfg).unwrap().report;

        assert!(scene.ghosts.len() > cfg.metrics.k);
        assert!(
            on.fpr_at_k.unwrap() < off.fpr_at_k.unwrap(),
            "seed {seed}: fpr {:?} !< {:?}",
            on.fpr_at_k,
            off.fpr_at_k
        );
        assert!(
            on.recall_at_k.unwrap() >= off.recall_at_k.unwrap(),
            "seed {seed}: recall {:?} < {:?}",
            on.recall_at_k,
            off.recall_at_k
        );
    }
}

#[test]
fn pipeline_reports_are_byte_identical_across_runs() {
    let dir = tempdir().unwrap();
    let scene = generate_scene(&SceneParams::default(), 303);
    let cfg = write_scene_files(dir.path(), &scene, 79, &class_names()).unwrap();

    let first = render_report(&run_pipeline(&cfg).unwrap().report);
    let second = render_report(&run_pipeline(&cfg).unwrap().report);
    assert_eq!(first, second);
}

#[test]
fn pipeline_reports_undefined_recall_without_unknown_gt() {
    let dir = tempdir().unwrap();
    let params = SceneParams {
        ood_fraction: 0.0,
        ghosts: 0,
        ..SceneParams::default()
    };
    let scene = generate_scene(&params, 304);
    assert!(scene.objects.iter().all(|o| !o.label.is_ood()));

    let cfg = write_scene_files(dir.path(), &scene, 80, &class_names()).unwrap();
    let report = run_pipeline(&cfg).unwrap().report;
    assert_eq!(report.recall_at_k, None);
    assert!(render_report(&report).contains("recall_at_k undefined"));
}

#[test]
fn pipeline_skips_images_with_missing_depth() {
    let dir = tempdir().unwrap();
    let scene = generate_scene(&SceneParams::default(), 305);
    let cfg = write_scene_files(dir.path(), &scene, 81, &class_names()).unwrap();

    // Remove the depth map while the depth filter is enabled.
    let depth_dir = cfg.paths.depth_dir.clone().unwrap();
    for entry in std::fs::read_dir(&depth_dir).unwrap() {
        std::fs::remove_file(entry.unwrap().path()).unwrap();
    }
    let outcome = run_pipeline(&cfg).unwrap();
    assert_eq!(outcome.skipped.len(), 1);
    assert!(outcome.skipped[0].reason.contains("no depth map"));
    assert_eq!(outcome.report.images, 0);
}

#[test]
fn disabling_dfr_yields_a_superset_of_kept_detections() {
    let dir = tempdir().unwrap();
    let scene = generate_scene(&SceneParams::default(), 306);
    let mut cfg = write_scene_files(dir.path(), &scene, 82, &class_names()).unwrap();

    cfg.dfr.mu = 0.0;
    let all = run_pipeline(&cfg).unwrap().report;
    for mu in [0.3, 0.6] {
        cfg.dfr.mu = mu;
        let some = run_pipeline(&cfg).unwrap().report;
        // With everything kept the FP count can only be at least as large.
        assert!(some.fpr_at_k.unwrap() <= all.fpr_at_k.unwrap());
        assert!(some.matched_unknown_gt <= all.matched_unknown_gt);
    }
}
