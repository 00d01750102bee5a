use super::split_axis;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::{cost, Scalar, Tensor, Var};

/// Row-wise softmax of contiguous rows, in place, with max subtraction.
fn softmax_rows<T: Scalar>(data: &mut [T], len: usize) {
    for row in data.chunks_mut(len) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        let inv = T::one() / z;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Softmax along `axis`. NaN inputs are rejected.
    pub fn softmax(self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(arg_err("softmax", format!("axis {axis} on shape {:?}", x.shape())));
        }
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let mut out = Tensor::zeros(x.shape());
        let mut row = vec![T::zero(); len];
        for o in 0..outer {
            for s in 0..inner {
                let at = |i: usize| (o * len + i) * inner + s;
                for (i, r) in row.iter_mut().enumerate() {
                    *r = x.data()[at(i)];
                }
                softmax_rows(&mut row, len);
                for (i, &r) in row.iter().enumerate() {
                    out.data_mut()[at(i)] = r;
                }
            }
        }
        Ok(self.graph().record("softmax", &[self], out, move |_, y, g, _| {
            let mut dx = Tensor::zeros(y.shape());
            for o in 0..outer {
                for s in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + s;
                    let dot: T = (0..len).map(|i| y.data()[at(i)] * g.data()[at(i)]).sum();
                    for i in 0..len {
                        dx.data_mut()[at(i)] = y.data()[at(i)] * (g.data()[at(i)] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Scaled dot-product attention over channel-major token maps.
    ///
    /// `q` is `[B, heads·dk, n]`, `k` is `[B, heads·dk, m]`, `v` is
    /// `[B, heads·dv, m]`. Head `h` owns channels `h·dk..(h+1)·dk` of `q`/`k`
    /// and `h·dv..(h+1)·dv` of `v`. Returns `[B, heads·dv, n]` where each
    /// head computes `V·softmax(scale·QᵀK)ᵀ`.
    pub fn multi_head_attention(
        self,
        k: Var<'g, T>,
        v: Var<'g, T>,
        heads: usize,
        scale: f64,
    ) -> Result<Var<'g, T>> {
        let (qv, kv, vv) = (self.value(), k.value(), v.value());
        let (&[b, qc, n], &[b2, kc, m], &[b3, vc, m2]) = (qv.shape(), kv.shape(), vv.shape()) else {
            return Err(shape_err(
                "multi_head_attention",
                format!("expected rank-3 q/k/v, got {:?} {:?} {:?}", qv.shape(), kv.shape(), vv.shape()),
            ));
        };
        if heads == 0 || b != b2 || b != b3 || qc != kc || m != m2 || qc % heads != 0 || vc % heads != 0 || m == 0 {
            return Err(shape_err(
                "multi_head_attention",
                format!("q {:?}, k {:?}, v {:?} with {heads} heads", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        let (dk, dv) = (qc / heads, vc / heads);
        let sc: T = T::from_f64(scale);
        // P[b, h] is n×m.
        let mut probs = vec![T::zero(); b * heads * n * m];
        let mut out = Tensor::zeros(&[b, vc, n]);
        for bi in 0..b {
            for h in 0..heads {
                let p = &mut probs[(bi * heads + h) * n * m..][..n * m];
                let qh = &qv.data()[(bi * qc + h * dk) * n..][..dk * n];
                let kh = &kv.data()[(bi * kc + h * dk) * m..][..dk * m];
                T::gemm(n, dk, m, sc, qh, (1, n), kh, (m, 1), T::zero(), p, (m, 1));
                softmax_rows(p, m);
                let vh = &vv.data()[(bi * vc + h * dv) * m..][..dv * m];
                let oh = &mut out.data_mut()[(bi * vc + h * dv) * n..][..dv * n];
                T::gemm(dv, m, n, T::one(), vh, (m, 1), p, (1, m), T::zero(), oh, (n, 1));
            }
        }
        cost::add((b * heads * n * m * (dk + dv)) as u64);
        Ok(self.graph().record("multi_head_attention", &[self, k, v], out, move |x, _, g, need| {
            let (qd, kd, vd, gd) = (x[0].data(), x[1].data(), x[2].data(), g.data());
            let mut dq = need[0].then(|| Tensor::zeros(x[0].shape()));
            let mut dk_t = need[1].then(|| Tensor::zeros(x[1].shape()));
            let mut dv_t = need[2].then(|| Tensor::zeros(x[2].shape()));
            let mut dp = vec![T::zero(); n * m];
            for bi in 0..b {
                for h in 0..heads {
                    let p = &probs[(bi * heads + h) * n * m..][..n * m];
                    let go = &gd[(bi * vc + h * dv) * n..][..dv * n];
                    let vh = &vd[(bi * vc + h * dv) * m..][..dv * m];
                    if let Some(dvt) = &mut dv_t {
                        // dV = dO · P
                        let dvh = &mut dvt.data_mut()[(bi * vc + h * dv) * m..][..dv * m];
                        T::gemm(dv, n, m, T::one(), go, (n, 1), p, (m, 1), T::zero(), dvh, (m, 1));
                    }
                    if dq.is_none() && dk_t.is_none() {
                        continue;
                    }
                    // dP = dOᵀ · V, then dS = P ⊙ (dP − rowsum(dP ⊙ P)).
                    T::gemm(n, dv, m, T::one(), go, (1, n), vh, (m, 1), T::zero(), &mut dp, (m, 1));
                    for (dr, pr) in dp.chunks_mut(m).zip(p.chunks(m)) {
                        let dot: T = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                        for (d, &pv) in dr.iter_mut().zip(pr) {
                            *d = pv * (*d - dot);
                        }
                    }
                    if let Some(dq) = &mut dq {
                        // dQ = scale · K · dSᵀ
                        let kh = &kd[(bi * kc + h * dk) * m..][..dk * m];
                        let dqh = &mut dq.data_mut()[(bi * qc + h * dk) * n..][..dk * n];
                        T::gemm(dk, m, n, sc, kh, (m, 1), &dp, (1, m), T::zero(), dqh, (n, 1));
                    }
                    if let Some(dkt) = &mut dk_t {
                        // dK = scale · Q · dS
                        let qh = &qd[(bi * qc + h * dk) * n..][..dk * n];
                        let dkh = &mut dkt.data_mut()[(bi * kc + h * dk) * m..][..dk * m];
                        T::gemm(dk, n, m, sc, qh, (n, 1), &dp, (m, 1), T::zero(), dkh, (m, 1));
                    }
                }
            }
            vec![dq, dk_t, dv_t]
        }))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use crate::tensor::gradcheck::finite_diff_check;
    use crate::tensor::{Graph, Tensor};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn seq(shape: &[usize], k: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + 1.0) * k).sin()).collect()).unwrap()
    }

    fn softmax1(v: &[f64]) -> Vec<f64> {
        let g = Graph::<f64>::no_grad();
        g.constant(t(&[v.len()], v)).softmax(0).unwrap().to_tensor().into_vec()
    }

    #[test]
    fn softmax_reference_rows() {
        assert_eq!(softmax1(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(softmax1(&[1000.0, 1000.0]), vec![0.5, 0.5]);
        let p = softmax1(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        let g = Graph::<f64>::no_grad();
        assert!(g.constant(t(&[2], &[f64::NAN, 0.0])).softmax(0).is_err());
    }

    #[test]
    fn softmax_gradient_on_inner_axis() {
        let err = finite_diff_check(|_, v| v[0].softmax(1), &[seq(&[2, 4, 3], 0.9)], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    /// Attention for one batch item and head via explicit loops.
    fn naive_head(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], scale: f64) -> Vec<Vec<f64>> {
        q.iter()
            .map(|qi| {
                let s: Vec<f64> = k.iter().map(|kj| scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>()).collect();
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                (0..v[0].len()).map(|c| e.iter().zip(v).map(|(w, vj)| w / z * vj[c]).sum()).collect()
            })
            .collect()
    }

    #[test]
    fn matches_naive_per_head() {
        let (b, heads, dk, dv, n, m) = (2, 3, 2, 4, 5, 3);
        let q = seq(&[b, heads * dk, n], 0.7);
        let k = seq(&[b, heads * dk, m], 0.3);
        let v = seq(&[b, heads * dv, m], 1.3);
        let g = Graph::<f64>::no_grad();
        let o = g
            .constant(q.clone())
            .multi_head_attention(g.constant(k.clone()), g.constant(v.clone()), heads, 0.5)
            .unwrap()
            .to_tensor();
        assert_eq!(o.shape(), &[b, heads * dv, n]);
        // Token-major views of each head.
        let tok = |x: &Tensor<f64>, bi: usize, h: usize, d: usize, len: usize| -> Vec<Vec<f64>> {
            (0..len).map(|i| (0..d).map(|c| x.at(&[bi, h * d + c, i])).collect()).collect()
        };
        for bi in 0..b {
            for h in 0..heads {
                let want = naive_head(&tok(&q, bi, h, dk, n), &tok(&k, bi, h, dk, m), &tok(&v, bi, h, dv, m), 0.5);
                for i in 0..n {
                    for c in 0..dv {
                        assert!((o.at(&[bi, h * dv + c, i]) - want[i][c]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn attention_gradients() {
        let err = finite_diff_check(
            |_, v| v[0].multi_head_attention(v[1], v[2], 2, 0.6),
            &[seq(&[2, 4, 5], 0.7), seq(&[2, 4, 3], 0.3), seq(&[2, 6, 3], 1.3)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn shape_errors() {
        let g = Graph::<f64>::no_grad();
        let q = g.constant(Tensor::zeros(&[1, 4, 5]));
        let k = g.constant(Tensor::zeros(&[1, 4, 3]));
        let v = g.constant(Tensor::zeros(&[1, 4, 2]));
        assert!(q.multi_head_attention(k, v, 2, 1.0).is_err());
        assert!(q.multi_head_attention(k, k, 3, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = softmax1(&vals);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
