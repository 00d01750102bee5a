use std::sync::RwLock;

use super::split_axis;
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-6;

/// Running mean and variance of a batch-norm layer. Interior mutability
/// lets a training-mode forward update them through a shared reference.
#[derive(Debug)]
pub struct BnStats<T: Scalar> {
    inner: RwLock<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            inner: RwLock::new((Tensor::zeros(&[channels]), Tensor::ones(&[channels]))),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean().numel()
    }

    pub fn mean(&self) -> Tensor<T> {
        self.inner.read().expect("bn stats lock").0.clone()
    }

    pub fn var(&self) -> Tensor<T> {
        self.inner.read().expect("bn stats lock").1.clone()
    }

    pub fn set(&self, mean: Tensor<T>, var: Tensor<T>) -> Result<()> {
        let c = self.channels();
        if mean.shape() != [c] || var.shape() != [c] {
            return Err(shape_err("BnStats::set", format!("expected [{c}] running statistics")));
        }
        *self.inner.write().expect("bn stats lock") = (mean, var);
        Ok(())
    }
}

impl<T: Scalar> Clone for BnStats<T> {
    fn clone(&self) -> Self {
        let (m, v) = self.inner.read().expect("bn stats lock").clone();
        Self { inner: RwLock::new((m, v)) }
    }
}

fn check_affine<T: Scalar>(op: &'static str, c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            op,
            format!("affine {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Normalizes each position over the channel axis (axis 1) and applies
    /// a per-channel affine map.
    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>) -> Result<Var<'g, T>> {
        let (x, gm, bt) = (self.value(), gamma.value(), beta.value());
        if x.rank() < 2 {
            return Err(shape_err("layer_norm", format!("need a channel axis, got {:?}", x.shape())));
        }
        let (outer, c, inner) = split_axis(x.shape(), 1);
        check_affine("layer_norm", c, &gm, &bt)?;
        let eps: T = T::from_f64(LN_EPS);
        let inv_c = T::one() / T::from_f64(c as f64);
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![T::zero(); outer * inner];
        let mut out = Tensor::zeros(x.shape());
        for o in 0..outer {
            for s in 0..inner {
                let at = |ch: usize| (o * c + ch) * inner + s;
                let mean = (0..c).map(|ch| x.data()[at(ch)]).sum::<T>() * inv_c;
                let var = (0..c).map(|ch| {
                    let d = x.data()[at(ch)] - mean;
                    d * d
                }).sum::<T>() * inv_c;
                let is = T::one() / (var + eps).sqrt();
                inv_std[o * inner + s] = is;
                for ch in 0..c {
                    let xh = (x.data()[at(ch)] - mean) * is;
                    xhat.data_mut()[at(ch)] = xh;
                    out.data_mut()[at(ch)] = xh * gm.data()[ch] + bt.data()[ch];
                }
            }
        }
        Ok(self.graph().record("layer_norm", &[self, gamma, beta], out, move |x, _, g, need| {
            let gm = x[1].data();
            let gd = g.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = need[0].then(|| Tensor::zeros(x[0].shape()));
            for o in 0..outer {
                for s in 0..inner {
                    let at = |ch: usize| (o * c + ch) * inner + s;
                    let mut sum_gy = T::zero();
                    let mut sum_gy_xh = T::zero();
                    for ch in 0..c {
                        let (gv, xh) = (gd[at(ch)], xhat.data()[at(ch)]);
                        dgamma[ch] += gv * xh;
                        dbeta[ch] += gv;
                        let gy = gv * gm[ch];
                        sum_gy += gy;
                        sum_gy_xh += gy * xh;
                    }
                    if let Some(dx) = &mut dx {
                        let is = inv_std[o * inner + s];
                        for ch in 0..c {
                            let gy = gd[at(ch)] * gm[ch];
                            let xh = xhat.data()[at(ch)];
                            dx.data_mut()[at(ch)] = is * (gy - inv_c * (sum_gy + xh * sum_gy_xh));
                        }
                    }
                }
            }
            vec![
                dx,
                need[1].then(|| Tensor::from_vec(&[c], dgamma).expect("gamma shape")),
                need[2].then(|| Tensor::from_vec(&[c], dbeta).expect("beta shape")),
            ]
        }))
    }

    /// Batch normalization of a `[B, C, H, W]` map. Training mode uses batch
    /// statistics and folds them into `stats`; eval mode uses `stats`.
    pub fn batch_norm2d(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        stats: &BnStats<T>,
        training: bool,
    ) -> Result<Var<'g, T>> {
        let (x, gm, bt) = (self.value(), gamma.value(), beta.value());
        let (n, c, h, w) = x.dims4("batch_norm2d")?;
        check_affine("batch_norm2d", c, &gm, &bt)?;
        if stats.channels() != c {
            return Err(shape_err("batch_norm2d", format!("running stats for {} channels, input has {c}", stats.channels())));
        }
        let plane = h * w;
        let count = n * plane;
        let eps = BN_EPS;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        if training {
            for (i, p) in x.data().chunks(plane).enumerate() {
                mean[i % c] += p.iter().map(|v| v.to_f64()).sum::<f64>();
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for (i, p) in x.data().chunks(plane).enumerate() {
                let m = mean[i % c];
                var[i % c] += p.iter().map(|v| (v.to_f64() - m).powi(2)).sum::<f64>();
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            let mut guard = stats.inner.write().expect("bn stats lock");
            let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
            for ch in 0..c {
                let rm = &mut guard.0.data_mut()[ch];
                *rm = T::from_f64((1.0 - BN_MOMENTUM) * rm.to_f64() + BN_MOMENTUM * mean[ch]);
                let rv = &mut guard.1.data_mut()[ch];
                *rv = T::from_f64((1.0 - BN_MOMENTUM) * rv.to_f64() + BN_MOMENTUM * var[ch] * unbias);
            }
        } else {
            let guard = stats.inner.read().expect("bn stats lock");
            mean = guard.0.to_f64_vec();
            var = guard.1.to_f64_vec();
        }
        let inv_std: Vec<T> = var.iter().map(|v| T::from_f64(1.0 / (v + eps).sqrt())).collect();
        let mean: Vec<T> = mean.into_iter().map(T::from_f64).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        for (i, ((p, xh), o)) in x
            .data()
            .chunks(plane)
            .zip(xhat.data_mut().chunks_mut(plane))
            .zip(out.data_mut().chunks_mut(plane))
            .enumerate()
        {
            let ch = i % c;
            let (m, is, ga, be) = (mean[ch], inv_std[ch], gm.data()[ch], bt.data()[ch]);
            for ((&v, xh), o) in p.iter().zip(xh.iter_mut()).zip(o.iter_mut()) {
                *xh = (v - m) * is;
                *o = *xh * ga + be;
            }
        }
        Ok(self.graph().record("batch_norm2d", &[self, gamma, beta], out, move |x, _, g, need| {
            let gm = x[1].data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (i, (gp, xp)) in g.data().chunks(plane).zip(xhat.data().chunks(plane)).enumerate() {
                for (&gv, &xh) in gp.iter().zip(xp) {
                    dgamma[i % c] += gv * xh;
                    dbeta[i % c] += gv;
                }
            }
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(x[0].shape());
                let inv_n = T::one() / T::from_f64(count as f64);
                for (i, ((gp, xp), dp)) in g
                    .data()
                    .chunks(plane)
                    .zip(xhat.data().chunks(plane))
                    .zip(dx.data_mut().chunks_mut(plane))
                    .enumerate()
                {
                    let ch = i % c;
                    let k = gm[ch] * inv_std[ch];
                    for ((&gv, &xh), d) in gp.iter().zip(xp).zip(dp.iter_mut()) {
                        *d = if training {
                            k * (gv - inv_n * (dbeta[ch] + xh * dgamma[ch]))
                        } else {
                            k * gv
                        };
                    }
                }
                dx
            });
            vec![
                dx,
                need[1].then(|| Tensor::from_vec(&[c], dgamma.clone()).expect("gamma shape")),
                need[2].then(|| Tensor::from_vec(&[c], dbeta.clone()).expect("beta shape")),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::finite_diff_check;
    use crate::tensor::Graph;

    fn seq(shape: &[usize], k: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + 1.0) * k).sin() * 2.0 + 0.3).collect()).unwrap()
    }

    fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, h, w) = t.dims4("test").unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| t.data()[(b * c + ch) * h * w..][..h * w].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn layer_norm_of_constant_is_beta() {
        let g = Graph::<f64>::no_grad();
        let x = g.constant(Tensor::full(&[2, 4, 3], 7.0));
        let y = x
            .layer_norm(g.constant(Tensor::ones(&[4])), g.constant(Tensor::zeros(&[4])))
            .unwrap()
            .to_tensor();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_standardizes_each_token() {
        let g = Graph::<f64>::no_grad();
        let x = g.constant(seq(&[2, 6, 5], 0.9));
        let y = x
            .layer_norm(g.constant(Tensor::ones(&[6])), g.constant(Tensor::zeros(&[6])))
            .unwrap()
            .to_tensor();
        for b in 0..2 {
            for s in 0..5 {
                let v: Vec<f64> = (0..6).map(|c| y.at(&[b, c, s])).collect();
                let m = v.iter().sum::<f64>() / 6.0;
                let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
                assert!(m.abs() < 1e-5 && (var - 1.0).abs() < 1e-5, "{m} {var}");
            }
        }
    }

    #[test]
    fn layer_norm_gradient() {
        let err = finite_diff_check(
            |_, v| v[0].layer_norm(v[1], v[2]),
            &[seq(&[2, 5, 2, 3], 0.7), seq(&[5], 0.4), seq(&[5], 1.1)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn batch_norm_training_moments_follow_affine() {
        let g = Graph::<f64>::no_grad();
        let stats = BnStats::new(3);
        let gamma = Tensor::from_f64(&[3], &[1.0, 2.0, 0.5]).unwrap();
        let beta = Tensor::from_f64(&[3], &[0.0, -1.0, 3.0]).unwrap();
        let y = g
            .constant(seq(&[4, 3, 5, 5], 0.37))
            .batch_norm2d(g.constant(gamma.clone()), g.constant(beta.clone()), &stats, true)
            .unwrap()
            .to_tensor();
        for ch in 0..3 {
            let (m, v) = channel_moments(&y, ch);
            assert!((m - beta.data()[ch]).abs() < 1e-5);
            assert!((v - gamma.data()[ch].powi(2)).abs() < 1e-4 * gamma.data()[ch].powi(2));
        }
        let running = stats.mean();
        let x = seq(&[4, 3, 5, 5], 0.37);
        let (m0, _) = channel_moments(&x, 0);
        assert!((running.data()[0] - 0.1 * m0).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_standard_input_passes_through() {
        let g = Graph::<f64>::no_grad();
        let data: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = Tensor::from_f64(&[2, 2, 2, 2], &data).unwrap();
        let stats = BnStats::new(2);
        let y = g
            .constant(x.clone())
            .batch_norm2d(g.constant(Tensor::ones(&[2])), g.constant(Tensor::zeros(&[2])), &stats, true)
            .unwrap()
            .to_tensor();
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn batch_norm_eval_is_deterministic() {
        let g = Graph::<f64>::no_grad();
        let stats = BnStats::new(3);
        stats
            .set(
                Tensor::from_f64(&[3], &[0.1, -0.2, 0.3]).unwrap(),
                Tensor::from_f64(&[3], &[1.5, 0.5, 2.0]).unwrap(),
            )
            .unwrap();
        let run = || {
            g.constant(seq(&[2, 3, 4, 4], 0.3))
                .batch_norm2d(g.constant(Tensor::ones(&[3])), g.constant(Tensor::zeros(&[3])), &stats, false)
                .unwrap()
                .to_tensor()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(stats.mean().to_f64_vec(), vec![0.1, -0.2, 0.3]);
        let x0 = seq(&[2, 3, 4, 4], 0.3).data()[0];
        assert!((a.data()[0] - (x0 - 0.1) / (1.5f64 + 1e-5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_gradients() {
        for training in [true, false] {
            let stats = BnStats::new(3);
            let err = finite_diff_check(
                |_, v| v[0].batch_norm2d(v[1], v[2], &stats, training),
                &[seq(&[2, 3, 3, 3], 0.7), seq(&[3], 0.4), seq(&[3], 1.1)],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "training={training}: {err}");
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let g = Graph::<f64>::no_grad();
        let x = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let (one, zero) = (g.constant(Tensor::ones(&[2])), g.constant(Tensor::zeros(&[2])));
        assert!(x.batch_norm2d(one, zero, &BnStats::new(3), true).is_err());
        assert!(x.layer_norm(one, zero).is_err());
    }
}
