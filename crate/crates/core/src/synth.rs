//! Synthetic ground-truth scenes and brute-force reference oracles.
//!
//! A scene is a perspective-like depth world: constant far depth above the
//! horizon, a linear ramp toward the camera below it (the road), protruding
//! objects of constant depth standing on the ramp, and flat "ghost" regions
//! that are visually distinct but have no 3-D extent (road markings,
//! shadows). Ghosts carry no ground-truth annotation, mirroring how false
//! positives arise on real roads.
//!
//! The fixture contract: `depth_per_row` is chosen so the interior Sobel
//! response of the ramp (`128 * depth_per_row` for the order-5 kernel)
//! clears the depth filter's change threshold, and objects are large enough
//! (`min_object_size`) that their flat interior dominates the edge bands
//! left by the closing and Sobel supports. Under that contract the depth
//! filter keeps every object box and rejects every ghost box at the default
//! `mu`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{intersect_area, BoundingBox, BoxSet};
use crate::metrics::{GtObject, RoiMask};
use crate::raster::{DepthMap, Raster};
use crate::scoring::{Detection, Label, Provenance};

/// Generation parameters; see the module docs for the fixture contract.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    /// First row of the ground ramp; rows above it hold constant far depth.
    pub horizon: usize,
    /// Depth at and above the horizon.
    pub far_depth: f32,
    /// Depth decrease per row toward the camera (ramp steepness).
    pub depth_per_row: f32,
    pub objects: usize,
    pub ghosts: usize,
    pub min_object_size: usize,
    pub max_object_size: usize,
    /// Number of known classes for labeling objects.
    pub known_classes: usize,
    /// Probability that an object is labeled OOD rather than a known class.
    pub ood_fraction: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 256,
            height: 192,
            horizon: 48,
            far_depth: 200.0,
            depth_per_row: 0.25,
            objects: 3,
            ghosts: 3,
            min_object_size: 28,
            max_object_size: 56,
            known_classes: 8,
            ood_fraction: 0.5,
        }
    }
}

/// One placed region: a protruding object (annotated, alters depth) or a
/// flat ghost (unannotated, depth untouched).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub bbox: BoundingBox,
    pub label: Label,
    pub is_3d: bool,
    /// Constant depth painted into the box; meaningful only for 3-D objects.
    pub depth: f32,
}

/// A generated world plus everything needed to run the pipeline on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub params: SceneParams,
    pub seed: u64,
    /// 3-D objects; these form the ground truth.
    pub objects: Vec<SceneObject>,
    /// Flat textured regions; never annotated.
    pub ghosts: Vec<BoundingBox>,
}

impl Scene {
    /// Ramp depth at a row (constant above the horizon).
    fn ramp_depth(&self, y: usize) -> f32 {
        let p = &self.params;
        if y < p.horizon {
            p.far_depth
        } else {
            p.far_depth - p.depth_per_row * (y - p.horizon) as f32
        }
    }

    /// Renders the depth map: ramp, then object depths painted in with
    /// nearest-depth-wins on overlap. Ghosts do not alter depth.
    pub fn depth_map(&self) -> DepthMap {
        let p = &self.params;
        let mut d = Raster::from_fn(p.width, p.height, |_, y| self.ramp_depth(y));
        for obj in &self.objects {
            let x0 = obj.bbox.x1 as usize;
            let x1 = obj.bbox.x2 as usize;
            let y0 = obj.bbox.y1 as usize;
            let y1 = obj.bbox.y2 as usize;
            for y in y0..y1.min(p.height) {
                for x in x0..x1.min(p.width) {
                    let current = d.get(x, y);
                    d.set(x, y, current.min(obj.depth));
                }
            }
        }
        d
    }

    /// RoI mask covering the ramp region (the road).
    pub fn roi_mask(&self) -> RoiMask {
        let horizon = self.params.horizon;
        Raster::from_fn(self.params.width, self.params.height, |_, y| y >= horizon)
    }

    /// Ground truth: the 3-D objects only.
    pub fn ground_truth(&self) -> Vec<GtObject> {
        self.objects
            .iter()
            .map(|o| GtObject {
                bbox: o.bbox,
                label: o.label,
            })
            .collect()
    }
}

/// Deterministically generates a scene from parameters and a seed.
///
/// Objects and ghosts are placed on the ramp by rejection sampling with a
/// separation margin, so no two regions interact through the morphology or
/// Sobel supports. Placement failures after many attempts simply yield fewer
/// regions.
pub fn generate_scene(params: &SceneParams, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = params.clone();
    // Margin keeping boxes clear of each other and of the raster border.
    let margin = 12usize;

    let mut placed: Vec<BoundingBox> = Vec::new();
    let mut objects = Vec::new();
    let mut ghosts = Vec::new();

    let mut scene = Scene {
        params: p.clone(),
        seed,
        objects: Vec::new(),
        ghosts: Vec::new(),
    };

    let y_lo = p.horizon + margin;
    let y_hi = p.height.saturating_sub(margin);
    // Interleave the two kinds so crowding cannot starve ghosts entirely.
    let mut kinds = Vec::with_capacity(p.objects + p.ghosts);
    for i in 0..p.objects.max(p.ghosts) {
        if i < p.objects {
            kinds.push(true);
        }
        if i < p.ghosts {
            kinds.push(false);
        }
    }
    for is_object in kinds {
        let mut attempts = 0;
        while attempts < 200 {
            attempts += 1;
            // When space runs short, retry at the minimum size.
            let cap = if attempts > 100 {
                p.min_object_size
            } else {
                p.max_object_size
            };
            let size_w = rng.random_range(p.min_object_size..=cap);
            let size_h = rng.random_range(p.min_object_size..=cap);
            if y_lo + size_h + margin > y_hi || p.width < size_w + 2 * margin {
                break;
            }
            let x = rng.random_range(margin..=p.width - margin - size_w);
            let y = rng.random_range(y_lo..=y_hi - size_h);
            let bbox = BoundingBox {
                x1: x as f64,
                y1: y as f64,
                x2: (x + size_w) as f64,
                y2: (y + size_h) as f64,
            };
            let padded = BoundingBox {
                x1: bbox.x1 - margin as f64,
                y1: bbox.y1 - margin as f64,
                x2: bbox.x2 + margin as f64,
                y2: bbox.y2 + margin as f64,
            };
            if placed.iter().any(|b| intersect_area(&padded, b) > 0.0) {
                continue;
            }
            placed.push(bbox);
            if is_object {
                let label = if rng.random_bool(p.ood_fraction) {
                    Label::Ood
                } else {
                    Label::Known(rng.random_range(0..p.known_classes.max(1)))
                };
                // Ground contact: the object's constant depth is the ramp
                // depth at its bottom row.
                let depth = scene.ramp_depth(bbox.y2 as usize - 1);
                objects.push(SceneObject {
                    bbox,
                    label,
                    is_3d: true,
                    depth,
                });
            } else {
                ghosts.push(bbox);
            }
            break;
        }
    }

    scene.objects = objects;
    scene.ghosts = ghosts;
    scene
}

/// One detection per object and per ghost, deterministic in the seed.
///
/// Object detections sit exactly on their ground truth. Known-class objects
/// get a confident `sco`; OOD objects and ghosts get a sub-threshold `sco`
/// with a high occupancy score, so they enter through the recall-enhancement
/// path. Ghost detections are how appearance-driven false positives reach
/// the evaluator.
pub fn planted_detections(scene: &Scene, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dets = Vec::new();
    for obj in &scene.objects {
        let (sco, occ, label) = match obj.label {
            Label::Known(_) => (rng.random_range(0.3..0.9), rng.random_range(0.5..0.9), obj.label),
            Label::Ood => (
                rng.random_range(0.0005..0.009),
                rng.random_range(0.5..0.9),
                Label::Ood,
            ),
        };
        dets.push(Detection {
            bbox: obj.bbox,
            class_scores: Vec::new(),
            sco,
            occ,
            label,
            provenance: Provenance::Standard,
        });
    }
    for ghost in &scene.ghosts {
        dets.push(Detection {
            bbox: *ghost,
            class_scores: Vec::new(),
            sco: rng.random_range(0.0005..0.009),
            occ: rng.random_range(0.5..0.95),
            label: Label::Ood,
            provenance: Provenance::Standard,
        });
    }
    dets
}

/// Brute-force occupancy reference: the fraction of `resolution^2` sample
/// points (cell centers of a uniform grid over `pred`) covered by any
/// ground-truth box.
///
/// Deliberately independent of the exact geometry path: nothing but
/// point-in-box tests.
pub fn raster_occupancy_oracle(pred: &BoundingBox, gts: &BoxSet, resolution: usize) -> f64 {
    if resolution == 0 || pred.area() <= 0.0 {
        return 0.0;
    }
    let step_x = pred.width() / resolution as f64;
    let step_y = pred.height() / resolution as f64;
    let mut covered = 0usize;
    let mut row_boxes: Vec<&BoundingBox> = Vec::with_capacity(gts.boxes.len());
    for j in 0..resolution {
        let y = pred.y1 + (j as f64 + 0.5) * step_y;
        row_boxes.clear();
        row_boxes.extend(gts.boxes.iter().filter(|b| y >= b.y1 && y < b.y2));
        if row_boxes.is_empty() {
            continue;
        }
        for i in 0..resolution {
            let x = pred.x1 + (i as f64 + 0.5) * step_x;
            if row_boxes.iter().any(|b| x >= b.x1 && x < b.x2) {
                covered += 1;
            }
        }
    }
    covered as f64 / (resolution * resolution) as f64
}
