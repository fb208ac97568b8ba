//! Mosaic composition and mixup blending with label-space remapping.
//!
//! Training data for unknown-aware detection mixes two sources: the driving
//! dataset itself and an auxiliary dataset rich in other object classes. The
//! four-tile mosaic draws two tiles from each source; auxiliary annotations
//! whose class matches a known driving class keep that class, everything
//! else collapses into the OOD class. A subsequent mixup blend against a
//! plain driving image softens the domain gap between the two sources.
//!
//! All randomness is seeded; identical inputs and seed produce bit-identical
//! rasters and annotation lists.

use std::collections::{BTreeMap, BTreeSet};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::scoring::Label;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("label {0:?} is not covered by the label-space map")]
    UnmappedLabel(String),
    #[error("degenerate canvas {0}x{1}")]
    DegenerateCanvas(u32, u32),
    #[error("source image {0:?} has zero size")]
    EmptyImage(String),
}

/// An image with box annotations. `L` is the annotation label type: source
/// label strings before remapping, resolved [`Label`]s after.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage<L> {
    pub pixels: RgbImage,
    pub annotations: Vec<(BoundingBox, L)>,
    /// Dataset tag, carried through for diagnostics.
    pub source: String,
}

pub type RawLabeledImage = LabeledImage<String>;
pub type MappedLabeledImage = LabeledImage<Label>;

/// Default known classes of the driving label space.
pub const AD_CLASSES: [&str; 8] = [
    "person",
    "rider",
    "car",
    "truck",
    "bicycle",
    "train",
    "bus",
    "motorcycle",
];

/// Total mapping from source labels onto the known classes plus OOD.
///
/// Known class names map to themselves; additional aliases cover source
/// datasets that share a semantic concept under a different name. By default
/// every unlisted label resolves to OOD, which keeps the mapping total; with
/// the fallback disabled, unlisted labels are an error instead.
#[derive(Debug, Clone)]
pub struct LabelSpaceMap {
    known: Vec<String>,
    aliases: BTreeMap<String, usize>,
    ood: BTreeSet<String>,
    unlisted_to_ood: bool,
}

impl LabelSpaceMap {
    pub fn new(known: Vec<String>) -> Self {
        let aliases = known
            .iter()
            .enumerate()
            .map(|(i, name)| (name.clone(), i))
            .collect();
        Self {
            known,
            aliases,
            ood: BTreeSet::new(),
            unlisted_to_ood: true,
        }
    }

    /// The eight driving classes.
    pub fn ad_default() -> Self {
        Self::new(AD_CLASSES.iter().map(|s| s.to_string()).collect())
    }

    pub fn known_classes(&self) -> &[String] {
        &self.known
    }

    /// Maps an additional source label onto a known class index.
    pub fn add_alias(&mut self, source_label: impl Into<String>, class: usize) {
        self.aliases.insert(source_label.into(), class);
    }

    /// Explicitly marks a source label as OOD.
    pub fn add_ood(&mut self, source_label: impl Into<String>) {
        self.ood.insert(source_label.into());
    }

    /// When disabled, labels that are neither aliased nor listed as OOD
    /// become errors.
    pub fn set_unlisted_to_ood(&mut self, enabled: bool) {
        self.unlisted_to_ood = enabled;
    }

    pub fn resolve(&self, label: &str) -> Result<Label, AugmentError> {
        if let Some(&idx) = self.aliases.get(label) {
            return Ok(Label::Known(idx));
        }
        if self.ood.contains(label) || self.unlisted_to_ood {
            return Ok(Label::Ood);
        }
        Err(AugmentError::UnmappedLabel(label.to_string()))
    }

    /// Index of a known class by name.
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.known.iter().position(|k| k == name)
    }
}

/// Resolves every annotation label through the map; geometry is untouched.
pub fn remap_labels(
    img: &RawLabeledImage,
    map: &LabelSpaceMap,
) -> Result<MappedLabeledImage, AugmentError> {
    let annotations = img
        .annotations
        .iter()
        .map(|(bbox, label)| map.resolve(label).map(|l| (*bbox, l)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MappedLabeledImage {
        pixels: img.pixels.clone(),
        annotations,
        source: img.source.clone(),
    })
}

/// Integer tile rectangle on the canvas.
#[derive(Debug, Clone, Copy)]
struct Tile {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

/// Four-tile mosaic drawing two tiles from the driving set and two from the
/// auxiliary set.
///
/// The center split is sampled uniformly from the middle 50% of each canvas
/// dimension and the four inputs are shuffled over the quadrants, both from
/// the seeded generator. Every tile is scaled (anisotropically, nearest
/// neighbor) to exactly fill its quadrant; annotations follow each tile's
/// affine map. Clipped boxes with area below one pixel are dropped.
pub fn mosaic_plus(
    ad_imgs: [&MappedLabeledImage; 2],
    ood_imgs: [&MappedLabeledImage; 2],
    canvas: (u32, u32),
    seed: u64,
) -> Result<MappedLabeledImage, AugmentError> {
    let (w, h) = canvas;
    if w < 2 || h < 2 {
        return Err(AugmentError::DegenerateCanvas(w, h));
    }
    let inputs = [ad_imgs[0], ad_imgs[1], ood_imgs[0], ood_imgs[1]];
    for img in inputs {
        if img.pixels.width() == 0 || img.pixels.height() == 0 {
            return Err(AugmentError::EmptyImage(img.source.clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = sample_split(&mut rng, w);
    let cy = sample_split(&mut rng, h);
    let mut slots = [0usize, 1, 2, 3];
    slots.shuffle(&mut rng);

    let tiles = [
        Tile { x0: 0, y0: 0, x1: cx, y1: cy },
        Tile { x0: cx, y0: 0, x1: w, y1: cy },
        Tile { x0: 0, y0: cy, x1: cx, y1: h },
        Tile { x0: cx, y0: cy, x1: w, y1: h },
    ];

    let mut pixels = RgbImage::new(w, h);
    let mut annotations = Vec::new();
    for (tile, &input_idx) in tiles.iter().zip(&slots) {
        paste_scaled(&mut pixels, tile, &inputs[input_idx].pixels);
        transform_annotations(&mut annotations, tile, inputs[input_idx]);
    }

    Ok(MappedLabeledImage {
        pixels,
        annotations,
        source: "mosaic".to_string(),
    })
}

/// Split position in the middle 50% of the dimension, at least one pixel
/// away from either edge.
fn sample_split(rng: &mut ChaCha8Rng, extent: u32) -> u32 {
    let lo = (extent / 4).max(1);
    let hi = (3 * extent / 4).min(extent - 1).max(lo);
    rng.random_range(lo..=hi)
}

/// Anisotropic nearest-neighbor scale of `src` onto the tile.
fn paste_scaled(dst: &mut RgbImage, tile: &Tile, src: &RgbImage) {
    let tile_w = (tile.x1 - tile.x0) as f64;
    let tile_h = (tile.y1 - tile.y0) as f64;
    let sx = src.width() as f64 / tile_w;
    let sy = src.height() as f64 / tile_h;
    for y in tile.y0..tile.y1 {
        let src_y = (((y - tile.y0) as f64 + 0.5) * sy) as u32;
        let src_y = src_y.min(src.height() - 1);
        for x in tile.x0..tile.x1 {
            let src_x = (((x - tile.x0) as f64 + 0.5) * sx) as u32;
            let src_x = src_x.min(src.width() - 1);
            dst.put_pixel(x, y, *src.get_pixel(src_x, src_y));
        }
    }
}

fn transform_annotations(
    out: &mut Vec<(BoundingBox, Label)>,
    tile: &Tile,
    input: &MappedLabeledImage,
) {
    let scale_x = (tile.x1 - tile.x0) as f64 / input.pixels.width() as f64;
    let scale_y = (tile.y1 - tile.y0) as f64 / input.pixels.height() as f64;
    for (bbox, label) in &input.annotations {
        let mapped = BoundingBox {
            x1: tile.x0 as f64 + bbox.x1 * scale_x,
            y1: tile.y0 as f64 + bbox.y1 * scale_y,
            x2: tile.x0 as f64 + bbox.x2 * scale_x,
            y2: tile.y0 as f64 + bbox.y2 * scale_y,
        };
        // Clip to the tile; the affine map already keeps boxes inside, but
        // source annotations may overhang their own image.
        let clipped = BoundingBox {
            x1: mapped.x1.max(tile.x0 as f64),
            y1: mapped.y1.max(tile.y0 as f64),
            x2: mapped.x2.min(tile.x1 as f64),
            y2: mapped.y2.min(tile.y1 as f64),
        };
        if clipped.x1 < clipped.x2 && clipped.y1 < clipped.y2 && clipped.area() >= 1.0 {
            out.push((clipped, *label));
        }
    }
}

/// Pixel blend `lambda * composite + (1 - lambda) * ad_img` with both
/// annotation sets kept at full weight (detection-style mixup).
///
/// The driving image is rescaled (with its annotations) when its size
/// differs from the composite canvas.
pub fn mixup_blend(
    composite: &MappedLabeledImage,
    ad_img: &MappedLabeledImage,
    lambda: f64,
) -> MappedLabeledImage {
    let lambda = lambda.clamp(0.0, 1.0);
    let (w, h) = composite.pixels.dimensions();

    let tile = Tile { x0: 0, y0: 0, x1: w, y1: h };
    let mut resized = RgbImage::new(w, h);
    paste_scaled(&mut resized, &tile, &ad_img.pixels);

    let mut pixels = RgbImage::new(w, h);
    for (x, y, out) in pixels.enumerate_pixels_mut() {
        let a = composite.pixels.get_pixel(x, y);
        let b = resized.get_pixel(x, y);
        for c in 0..3 {
            let blended = lambda * a.0[c] as f64 + (1.0 - lambda) * b.0[c] as f64;
            out.0[c] = blended.round() as u8;
        }
    }

    let mut annotations = composite.annotations.clone();
    transform_annotations(&mut annotations, &tile, ad_img);

    MappedLabeledImage {
        pixels,
        annotations,
        source: "mixup".to_string(),
    }
}
