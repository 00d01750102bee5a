use super::lit;
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor, Var};

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

/// Standard normal CDF via `erf`.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x + y);
        Ok(self.graph().record("add", &[self, other], out, |_, _, g, _| {
            vec![Some(g.clone()), Some(g.clone())]
        }))
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x - y);
        Ok(self.graph().record("sub", &[self, other], out, |_, _, g, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x * y);
        Ok(self.graph().record("mul", &[self, other], out, |x, _, g, need| {
            vec![
                need[0].then(|| zip_map(g, x[1], |g, b| g * b)),
                need[1].then(|| zip_map(g, x[0], |g, a| g * a)),
            ]
        }))
    }

    /// `self + other` where `other` has a leading extent of 1 and is
    /// broadcast over the batch axis.
    pub fn add_broadcast0(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() == 0 || b.rank() != a.rank() || b.shape()[0] != 1 || b.shape()[1..] != a.shape()[1..] {
            return Err(shape_err(
                "add_broadcast0",
                format!("cannot broadcast {:?} onto {:?}", b.shape(), a.shape()),
            ));
        }
        let per = b.numel();
        let mut out = (*a).clone();
        for chunk in out.data_mut().chunks_mut(per) {
            for (o, &v) in chunk.iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        Ok(self.graph().record("add_broadcast0", &[self, other], out, move |x, _, g, need| {
            let gb = need[1].then(|| {
                let mut acc = Tensor::zeros(x[1].shape());
                for chunk in g.data().chunks(per) {
                    for (a, &v) in acc.data_mut().iter_mut().zip(chunk) {
                        *a += v;
                    }
                }
                acc
            });
            vec![Some(g.clone()), gb]
        }))
    }

    pub fn scale(self, s: f64) -> Var<'g, T> {
        let k: T = lit(s);
        let out = self.value().map(|v| v * k);
        self.graph().record("scale", &[self], out, move |_, _, g, _| {
            vec![Some(g.map(|v| v * k))]
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'g, T> {
        let x = self.value();
        let total: T = x.data().iter().copied().sum();
        let shape = x.shape().to_vec();
        self.graph().record("sum", &[self], Tensor::scalar(total), move |_, _, g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(self) -> Var<'g, T> {
        let n = self.value().numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(self) -> Var<'g, T> {
        let out = self.value().map(|v| {
            let x = v.to_f64();
            T::from_f64(x * normal_cdf(x))
        });
        self.graph().record("gelu", &[self], out, |x, _, g, _| {
            vec![Some(zip_map(g, x[0], |g, v| {
                let x = v.to_f64();
                g * T::from_f64(normal_cdf(x) + x * normal_pdf(x))
            }))]
        })
    }
}
