use crate::error::{shape_err, Result};
use crate::tensor::{cost, Scalar, Tensor, Var};

impl<'g, T: Scalar> Var<'g, T> {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
            return Err(shape_err(
                "matmul",
                format!("expected matrices, got {:?} and {:?}", a.shape(), b.shape()),
            ));
        };
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(m, k, n, T::one(), a.data(), (k, 1), b.data(), (n, 1), T::zero(), out.data_mut(), (n, 1));
        cost::add((m * k * n) as u64);
        Ok(self.graph().record("matmul", &[self, other], out, move |x, _, g, need| {
            let da = need[0].then(|| {
                let mut da = Tensor::zeros(&[m, k]);
                T::gemm(m, n, k, T::one(), g.data(), (n, 1), x[1].data(), (1, n), T::zero(), da.data_mut(), (k, 1));
                da
            });
            let db = need[1].then(|| {
                let mut db = Tensor::zeros(&[k, n]);
                T::gemm(k, m, n, T::one(), x[0].data(), (1, k), g.data(), (n, 1), T::zero(), db.data_mut(), (n, 1));
                db
            });
            vec![da, db]
        }))
    }

    /// Pointwise linear map over the channel axis: `y[b,:,s] = W x[b,:,s] + bias`
    /// for `x` of shape `[B, Cin, ...]` and `W` of shape `[Cout, Cin]`.
    /// Doubles as a fully connected layer on `[B, Cin]`.
    pub fn channel_linear(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>) -> Result<Var<'g, T>> {
        let (x, w) = (self.value(), weight.value());
        let &[cout, cin] = w.shape() else {
            return Err(shape_err("channel_linear", format!("weight must be [out, in], got {:?}", w.shape())));
        };
        if x.rank() < 2 || x.shape()[1] != cin {
            return Err(shape_err(
                "channel_linear",
                format!("input {:?} does not have {cin} channels on axis 1", x.shape()),
            ));
        }
        if let Some(b) = bias {
            if b.value().shape() != [cout] {
                return Err(shape_err("channel_linear", format!("bias {:?} vs {cout} outputs", b.value().shape())));
            }
        }
        let batch = x.shape()[0];
        let s: usize = x.shape()[2..].iter().product();
        let mut shape = x.shape().to_vec();
        shape[1] = cout;
        let mut out = Tensor::zeros(&shape);
        {
            let od = out.data_mut();
            if let Some(b) = bias {
                let b = b.value();
                for (i, chunk) in od.chunks_mut(s).enumerate() {
                    chunk.fill(b.data()[i % cout]);
                }
            }
            for n in 0..batch {
                T::gemm(
                    cout, cin, s, T::one(),
                    w.data(), (cin, 1),
                    &x.data()[n * cin * s..(n + 1) * cin * s], (s, 1),
                    T::one(),
                    &mut od[n * cout * s..(n + 1) * cout * s], (s, 1),
                );
            }
        }
        cost::add((batch * cout * cin * s) as u64);
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.graph().record("channel_linear", &inputs, out, move |x, _, g, need| {
            let (xv, wv, gd) = (x[0].data(), x[1].data(), g.data());
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(x[0].shape());
                for n in 0..batch {
                    T::gemm(
                        cin, cout, s, T::one(),
                        wv, (1, cin),
                        &gd[n * cout * s..(n + 1) * cout * s], (s, 1),
                        T::zero(),
                        &mut dx.data_mut()[n * cin * s..(n + 1) * cin * s], (s, 1),
                    );
                }
                dx
            });
            let dw = need[1].then(|| {
                let mut dw = Tensor::zeros(&[cout, cin]);
                for n in 0..batch {
                    T::gemm(
                        cout, s, cin, T::one(),
                        &gd[n * cout * s..(n + 1) * cout * s], (s, 1),
                        &xv[n * cin * s..(n + 1) * cin * s], (1, s),
                        T::one(),
                        dw.data_mut(), (cin, 1),
                    );
                }
                dw
            });
            let mut grads = vec![dx, dw];
            if x.len() == 3 {
                grads.push(need[2].then(|| {
                    let mut db = vec![T::zero(); cout];
                    for (i, chunk) in gd.chunks(s).enumerate() {
                        db[i % cout] += chunk.iter().copied().sum::<T>();
                    }
                    Tensor::from_vec(&[cout], db).expect("bias shape")
                }));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::gradcheck::finite_diff_check;
    use crate::tensor::{Graph, Tensor};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_and_hand_products() {
        let g = Graph::<f64>::no_grad();
        let i = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = g.constant(t(&[2, 2], &[3., 4., 5., 6.]));
        assert_eq!(i.matmul(b).unwrap().to_tensor().to_f64_vec(), vec![3., 4., 5., 6.]);
        let r = g.constant(t(&[1, 2], &[1., 2.]));
        let c = g.constant(t(&[2, 1], &[3., 4.]));
        let p = r.matmul(c).unwrap().to_tensor();
        assert_eq!(p.shape(), &[1, 1]);
        assert_eq!(p.item(), 11.0);
    }

    #[test]
    fn mismatch_error_names_both_shapes() {
        let g = Graph::<f64>::no_grad();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn sum_of_product_gradient_is_ones_times_bt() {
        let a = t(&[2, 3], &[0.3, -1.2, 0.5, 2.0, 0.1, -0.7]);
        let b = t(&[3, 2], &[1.0, -0.5, 0.25, 2.0, -1.5, 0.75]);
        let g = Graph::new();
        let (va, vb) = (g.leaf(a.clone(), true), g.leaf(b.clone(), true));
        let grads = g.backward(va.matmul(vb).unwrap().sum()).unwrap();
        // ones[2,2]·Bᵀ: every row equals the row sums of B.
        let row_sums: Vec<f64> = (0..3).map(|i| b.at(&[i, 0]) + b.at(&[i, 1])).collect();
        let da = grads.get(va).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((da.at(&[r, c]) - row_sums[c]).abs() < 1e-15);
            }
        }
        let err = finite_diff_check(
            |_, v| v[0].matmul(v[1]),
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn dense_layer_count_and_gradient() {
        let x = t(&[3, 4], &[0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.0, 0.3, 0.3, -0.2, 0.9]);
        let w = t(&[2, 4], &[0.5, -0.1, 0.2, 0.7, -0.3, 0.8, 0.1, -0.6]);
        let b = t(&[2], &[0.05, -0.2]);
        let err = finite_diff_check(
            |_, v| v[0].channel_linear(v[1], Some(v[2])),
            &[x, w, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "rel err {err}");
    }

    #[test]
    fn channel_linear_on_feature_maps_matches_loops() {
        let g = Graph::<f64>::no_grad();
        let xd: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let wd: Vec<f64> = (0..4 * 3).map(|i| (i as f64 * 0.11).cos()).collect();
        let x = g.constant(t(&[2, 3, 2, 2], &xd));
        let w = g.constant(t(&[4, 3], &wd));
        let b = g.constant(t(&[4], &[1., 2., 3., 4.]));
        let y = x.channel_linear(w, Some(b)).unwrap().to_tensor();
        assert_eq!(y.shape(), &[2, 4, 2, 2]);
        for n in 0..2 {
            for o in 0..4 {
                for p in 0..4 {
                    let want: f64 = (o + 1) as f64
                        + (0..3).map(|i| wd[o * 3 + i] * xd[(n * 3 + i) * 4 + p]).sum::<f64>();
                    assert!((y.data()[(n * 4 + o) * 4 + p] - want).abs() < 1e-12);
                }
            }
        }
    }
}
