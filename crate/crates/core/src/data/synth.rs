use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ImageRecord, PIXEL_BYTES};
use crate::error::{Error, Result};

/// Default per-pixel noise standard deviation, in byte units.
pub const SYNTH_NOISE: f64 = 24.0;

/// Base colour of class `k` among `num_classes`: a point on an evenly
/// spaced RGB lattice, so distinct classes get distinct colours.
pub fn class_color(k: usize, num_classes: usize) -> [u8; 3] {
    let mut levels = 2;
    while levels * levels * levels < num_classes {
        levels += 1;
    }
    let step = 192 / (levels - 1);
    let digit = |d: usize| (32 + step * ((k / levels.pow(d as u32)) % levels)) as u8;
    [digit(0), digit(1), digit(2)]
}

/// `n_per_class` images per class, interleaved by label. Each image is its
/// class colour plus Gaussian noise of standard deviation `noise` bytes.
pub fn synth_dataset_with_noise(
    num_classes: usize,
    n_per_class: usize,
    seed: u64,
    noise: f64,
) -> Result<Vec<ImageRecord>> {
    if !(2..=256).contains(&num_classes) {
        return Err(Error::Config(format!("synthetic dataset needs 2..=256 classes, got {num_classes}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise level {noise} must be finite and non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut out = Vec::with_capacity(num_classes * n_per_class);
    for _ in 0..n_per_class {
        for k in 0..num_classes {
            let color = class_color(k, num_classes);
            let pixels = (0..PIXEL_BYTES)
                .map(|i| {
                    let base = color[i / 1024] as f64;
                    let v = if noise > 0.0 { base + dist.sample(&mut rng) } else { base };
                    v.round().clamp(0.0, 255.0) as u8
                })
                .collect();
            out.push(ImageRecord { label: k, coarse: None, pixels });
        }
    }
    Ok(out)
}

/// [`synth_dataset_with_noise`] at [`SYNTH_NOISE`].
pub fn synth_dataset(num_classes: usize, n_per_class: usize, seed: u64) -> Result<Vec<ImageRecord>> {
    synth_dataset_with_noise(num_classes, n_per_class, seed, SYNTH_NOISE)
}
