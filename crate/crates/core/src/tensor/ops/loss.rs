use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor, Var};

impl<'g, T: Scalar> Var<'g, T> {
    /// Mean softmax cross-entropy of `[B, K]` logits against class ids,
    /// with the target distribution `(1 − ε)·onehot + ε/K`.
    pub fn cross_entropy(self, labels: &[usize], smoothing: f64) -> Result<Var<'g, T>> {
        let x = self.value();
        let &[b, k] = x.shape() else {
            return Err(shape_err("cross_entropy", format!("expected [batch, classes], got {:?}", x.shape())));
        };
        if labels.len() != b {
            return Err(shape_err("cross_entropy", format!("{} labels for batch of {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(arg_err("cross_entropy", format!("label {bad} out of range for {k} classes")));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(arg_err("cross_entropy", format!("smoothing {smoothing} outside [0, 1)")));
        }
        let off = smoothing / k as f64;
        let on = 1.0 - smoothing + off;
        let mut probs = vec![0.0f64; b * k];
        let mut total = 0.0;
        for (r, (row, p)) in x.data().chunks(k).zip(probs.chunks_mut(k)).enumerate() {
            let mx = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v.to_f64() - mx).exp()).sum();
            let lse = mx + z.ln();
            for (j, (&v, p)) in row.iter().zip(p.iter_mut()).enumerate() {
                let logp = v.to_f64() - lse;
                *p = logp.exp();
                let target = if j == labels[r] { on } else { off };
                total -= target * logp;
            }
        }
        let out = Tensor::scalar(T::from_f64(total / b as f64));
        let labels = labels.to_vec();
        Ok(self.graph().record("cross_entropy", &[self], out, move |_, _, g, _| {
            let scale = g.item().to_f64() / b as f64;
            let data = probs
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let target = if i % k == labels[i / k] { on } else { off };
                    T::from_f64((p - target) * scale)
                })
                .collect();
            vec![Some(Tensor::from_vec(&[b, k], data).expect("logit grad shape"))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::gradcheck::finite_diff_check;
    use crate::tensor::{Graph, Tensor};

    #[test]
    fn uniform_logits_give_log_k() {
        let g = Graph::<f64>::no_grad();
        let l = g.constant(Tensor::zeros(&[3, 7])).cross_entropy(&[0, 3, 6], 0.0).unwrap();
        assert!((l.to_tensor().item() - 7f64.ln()).abs() < 1e-12);
        // Smoothing does not change the loss when the prediction is uniform.
        let l = g.constant(Tensor::zeros(&[3, 7])).cross_entropy(&[0, 3, 6], 0.1).unwrap();
        assert!((l.to_tensor().item() - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let g = Graph::<f64>::no_grad();
        let l = g
            .constant(Tensor::from_f64(&[1, 3], &[0.0, 80.0, 0.0]).unwrap())
            .cross_entropy(&[1], 0.0)
            .unwrap();
        assert!(l.to_tensor().item() < 1e-30);
    }

    #[test]
    fn invalid_labels_are_errors() {
        let g = Graph::<f64>::no_grad();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        assert!(x.cross_entropy(&[0, 3], 0.0).is_err());
        assert!(x.cross_entropy(&[0], 0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits: Vec<f64> = (0..12).map(|i| (i as f64 * 0.77).sin() * 3.0).collect();
        for smoothing in [0.0, 0.1] {
            let err = finite_diff_check(
                |_, v| v[0].cross_entropy(&[2, 0, 3], smoothing),
                &[Tensor::from_f64(&[3, 4], &logits).unwrap()],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }
}
