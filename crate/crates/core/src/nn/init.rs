use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Param, Scalar, Tensor};

/// Standard deviation of weight initialization.
pub const WEIGHT_STD: f64 = 0.02;

/// Seeded parameter factory. Construction order fixes which random draws
/// each parameter receives.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }

    /// Normal draws with standard deviation `std`, resampled outside ±2σ.
    pub fn trunc_normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                if z.abs() <= 2.0 {
                    break T::from_f64(z * std);
                }
            })
            .collect();
        Tensor::from_vec(shape, data).expect("init shape")
    }

    pub fn weight<T: Scalar>(&mut self, name: String, shape: &[usize]) -> Param<T> {
        Param::new(name, self.trunc_normal(shape, WEIGHT_STD))
    }

    pub fn zeros<T: Scalar>(&mut self, name: String, shape: &[usize]) -> Param<T> {
        Param::new(name, Tensor::zeros(shape)).no_decay()
    }

    pub fn ones<T: Scalar>(&mut self, name: String, shape: &[usize]) -> Param<T> {
        Param::new(name, Tensor::ones(shape)).no_decay()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_and_seeded() {
        let a: Tensor<f64> = Init::new(3).trunc_normal(&[4000], 0.02);
        let b: Tensor<f64> = Init::new(3).trunc_normal(&[4000], 0.02);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 0.04));
        let mean = a.sum_f64() / 4000.0;
        let sd = (a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4000.0).sqrt();
        // A normal truncated at ±2σ keeps about 88% of its standard deviation.
        assert!(mean.abs() < 2e-3);
        assert!((sd / 0.02 - 0.88).abs() < 0.03, "{sd}");
        assert_ne!(a, Init::new(4).trunc_normal::<f64>(&[4000], 0.02));
    }
}
