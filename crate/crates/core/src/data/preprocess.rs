use rand::Rng;

use super::{ImageRecord, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel statistics of the CIFAR-10 training set.
pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

/// Reduced augmentation pipeline: normalize, pad-and-crop, flip, resize.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Zero padding on each side before a random 32×32 crop; 0 disables.
    pub crop_pad: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    /// Bilinear resize target; `None` keeps 32×32.
    pub resize: Option<usize>,
}

impl AugmentConfig {
    /// Crop with 4-pixel padding and horizontal flips.
    pub fn train(resize: Option<usize>) -> Self {
        Self { flip_prob: 0.5, crop_pad: 4, mean: CIFAR_MEAN, std: CIFAR_STD, resize }
    }

    /// Normalization and resize only.
    pub fn eval(resize: Option<usize>) -> Self {
        Self { flip_prob: 0.0, crop_pad: 0, mean: CIFAR_MEAN, std: CIFAR_STD, resize }
    }

    pub fn output_side(&self) -> usize {
        self.resize.unwrap_or(IMAGE_SIDE)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        if self.resize == Some(0) {
            return Err(Error::Config("resize target must be positive".into()));
        }
        Ok(())
    }
}

/// Record → normalized `[3, side, side]` tensor, drawing crop offsets and
/// the flip decision from `rng`. Deterministic when both are disabled.
pub fn preprocess<T: Scalar>(record: &ImageRecord, aug: &AugmentConfig, rng: &mut impl Rng) -> Tensor<T> {
    let s = IMAGE_SIDE;
    let plane = s * s;
    let mut img: Vec<f32> = record
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let c = i / plane;
            (b as f32 / 255.0 - aug.mean[c]) / aug.std[c]
        })
        .collect();
    if aug.crop_pad > 0 {
        let p = aug.crop_pad;
        let (dy, dx) = (rng.gen_range(0..=2 * p), rng.gen_range(0..=2 * p));
        let mut out = vec![0.0; img.len()];
        for c in 0..3 {
            for y in 0..s {
                let sy = (y + dy) as isize - p as isize;
                if !(0..s as isize).contains(&sy) {
                    continue;
                }
                for x in 0..s {
                    let sx = (x + dx) as isize - p as isize;
                    if (0..s as isize).contains(&sx) {
                        out[c * plane + y * s + x] = img[c * plane + sy as usize * s + sx as usize];
                    }
                }
            }
        }
        img = out;
    }
    if aug.flip_prob > 0.0 && rng.gen_bool(aug.flip_prob) {
        for row in img.chunks_mut(s) {
            row.reverse();
        }
    }
    let (side, data) = match aug.resize {
        Some(t) if t != s => (t, resize_bilinear(&img, 3, s, s, t, t)),
        _ => (s, img),
    };
    Tensor::from_vec(&[3, side, side], data.into_iter().map(|v| T::from_f64(v as f64)).collect())
        .expect("preprocess output shape")
}

/// Bilinear resampling of `c` planes with half-pixel centres and edge
/// clamping, so a constant image stays constant.
pub fn resize_bilinear(src: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|o| {
                let pos = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, pos - i0 as f32)
            })
            .collect()
    };
    let (ys, xs) = (axis(oh, h), axis(ow, w));
    let mut out = Vec::with_capacity(c * oh * ow);
    for p in src.chunks(h * w).take(c) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}
