use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel-major image layout of a feature row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSpec {
    /// Required for flips and shifts; vector data leaves it `None`.
    pub image_shape: Option<ImageShape>,
    pub horizontal_flip: bool,
    pub flip_probability: f64,
    /// Maximum shift as a fraction of height/width; content moved out is
    /// dropped and vacated pixels are zero.
    pub shift_fraction: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            image_shape: None,
            horizontal_flip: false,
            flip_probability: 0.5,
            shift_fraction: 0.0,
        }
    }
}

impl AugmentationSpec {
    /// Flips plus shifts of up to 10%.
    pub fn image_default(shape: ImageShape) -> Self {
        Self {
            image_shape: Some(shape),
            horizontal_flip: true,
            flip_probability: 0.5,
            shift_fraction: 0.10,
        }
    }

    pub fn is_noop(&self) -> bool {
        !self.horizontal_flip && self.shift_fraction == 0.0
    }
}

pub fn flip_horizontal(row: &[f64], s: ImageShape) -> Vec<f64> {
    let mut out = row.to_vec();
    for c in 0..s.channels {
        for y in 0..s.height {
            let base = (c * s.height + y) * s.width;
            out[base..base + s.width].reverse();
        }
    }
    out
}

/// Translates by `(dy, dx)` pixels with zero fill.
pub fn shift(row: &[f64], s: ImageShape, dy: isize, dx: isize) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    let (h, w) = (s.height as isize, s.width as isize);
    for c in 0..s.channels {
        for y in 0..h {
            let sy = y - dy;
            if !(0..h).contains(&sy) {
                continue;
            }
            for x in 0..w {
                let sx = x - dx;
                if (0..w).contains(&sx) {
                    let plane = c * s.height * s.width;
                    out[plane + (y * w + x) as usize] = row[plane + (sy * w + sx) as usize];
                }
            }
        }
    }
    out
}

/// Randomly flips and shifts each row of `x`; labels are untouched by construction.
pub fn augment<R: Rng + ?Sized>(x: &Tensor, spec: &AugmentationSpec, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&spec.shift_fraction) {
        return Err(Error::Config(format!(
            "shift_fraction must lie in [0, 1), got {}",
            spec.shift_fraction
        )));
    }
    if spec.is_noop() {
        return Ok(x.clone());
    }
    let shape = spec.image_shape.ok_or_else(|| {
        Error::Config("flip/shift augmentation requested on non-image data".into())
    })?;
    if shape.numel() != x.cols() {
        return Err(Error::Config(format!(
            "image shape {shape:?} does not match {} features",
            x.cols()
        )));
    }
    let max_dy = (spec.shift_fraction * shape.height as f64).round() as isize;
    let max_dx = (spec.shift_fraction * shape.width as f64).round() as isize;
    let mut data = Vec::with_capacity(x.numel());
    for row in x.row_iter() {
        let mut r = row.to_vec();
        if spec.horizontal_flip && rng.random::<f64>() < spec.flip_probability {
            r = flip_horizontal(&r, shape);
        }
        if max_dy > 0 || max_dx > 0 {
            let dy = rng.random_range(-(max_dy as i64)..=max_dy as i64) as isize;
            let dx = rng.random_range(-(max_dx as i64)..=max_dx as i64) as isize;
            r = shift(&r, shape, dy, dx);
        }
        data.extend(r);
    }
    Tensor::new(x.shape().to_vec(), data)
}
