//! Dense single-channel rasters shared by the depth, mask and metric modules.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("raster dimensions {width}x{height} do not match {len} values")]
    ShapeMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
}

/// Row-major single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
}

/// Dense depth values in caller-defined sensor units (disparity or metric).
pub type DepthMap = Raster<f32>;
/// Signed vertical depth-gradient response, same shape as its source depth map.
pub type DepthChangeMap = Raster<f32>;
/// Per-pixel anomaly scores.
pub type ScoreMap = Raster<f32>;
/// Boolean mask (thresholded scores, regions of interest).
pub type BinaryMask = Raster<bool>;

impl<T: Copy> Raster<T> {
    pub fn from_vec(width: usize, height: usize, values: Vec<T>) -> Result<Self, RasterError> {
        if values.len() != width * height {
            return Err(RasterError::ShapeMismatch {
                width,
                height,
                len: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.values[y * self.width + x] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.values[y * self.width..(y + 1) * self.width]
    }

    pub fn same_shape<U: Copy>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Builds a raster by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }
}

impl BinaryMask {
    pub fn count_true(&self) -> usize {
        self.values().iter().filter(|&&v| v).count()
    }
}

/// Integer pixel bounds of a continuous box clipped to a raster, rounding
/// outward (floor on the low edge, ceil on the high edge).
///
/// Returns `None` when the clipped box covers no pixel.
pub fn clip_box_to_raster(
    bbox: &crate::geometry::BoundingBox,
    width: usize,
    height: usize,
) -> Option<PixelRect> {
    let x0 = bbox.x1.floor().max(0.0) as usize;
    let y0 = bbox.y1.floor().max(0.0) as usize;
    let x1 = (bbox.x2.ceil().min(width as f64)).max(0.0) as usize;
    let y1 = (bbox.y2.ceil().min(height as f64)).max(0.0) as usize;
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Some(PixelRect { x0, y0, x1, y1 })
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn pixel_count(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}
