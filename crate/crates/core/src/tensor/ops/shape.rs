use super::split_axis;
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Copies `len` slices along `axis` starting at `start` out of `src` and
/// into `dst` at `dst_start`, both tensors sharing all other extents.
fn copy_axis<T: Scalar>(
    src: &Tensor<T>,
    src_start: usize,
    dst: &mut Tensor<T>,
    dst_start: usize,
    len: usize,
    axis: usize,
) {
    let (outer, src_len, inner) = split_axis(src.shape(), axis);
    let dst_len = dst.shape()[axis];
    let run = len * inner;
    for o in 0..outer {
        let s = (o * src_len + src_start) * inner;
        let d = (o * dst_len + dst_start) * inner;
        dst.data_mut()[d..d + run].copy_from_slice(&src.data()[s..s + run]);
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let from = x.shape().to_vec();
        let out = (*x).clone().reshape(shape)?;
        Ok(self.graph().record("reshape", &[self], out, move |_, _, g, _| {
            vec![Some(g.clone().reshape(&from).expect("same numel"))]
        }))
    }

    /// Transpose of a matrix.
    pub fn transpose2d(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let &[r, c] = x.shape() else {
            return Err(shape_err("transpose2d", format!("expected a matrix, got {:?}", x.shape())));
        };
        let out = transpose(&x, r, c);
        Ok(self.graph().record("transpose2d", &[self], out, move |_, _, g, _| {
            vec![Some(transpose(g, c, r))]
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        if axis >= x.rank() || start + len > x.shape()[axis] {
            return Err(arg_err(
                "narrow",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, x.shape()),
            ));
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let mut out = Tensor::zeros(&shape);
        copy_axis(&x, start, &mut out, 0, len, axis);
        let full = x.shape().to_vec();
        Ok(self.graph().record("narrow", &[self], out, move |_, _, g, _| {
            let mut gx = Tensor::zeros(&full);
            copy_axis(g, 0, &mut gx, start, len, axis);
            vec![Some(gx)]
        }))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let Some(first) = parts.first() else {
            return Err(arg_err("concat", "no inputs"));
        };
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut shape = values[0].shape().to_vec();
        if axis >= shape.len() {
            return Err(arg_err("concat", format!("axis {axis} on rank {}", shape.len())));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            let ok = s.len() == shape.len()
                && s.iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {axis}", s, values[0].shape())));
            }
            lens.push(s[axis]);
        }
        shape[axis] = lens.iter().sum();
        let mut out = Tensor::zeros(&shape);
        let mut at = 0;
        for (v, &len) in values.iter().zip(&lens) {
            copy_axis(v, 0, &mut out, at, len, axis);
            at += len;
        }
        Ok(first.graph().record("concat", parts, out, move |x, _, g, need| {
            let mut at = 0;
            x.iter()
                .zip(&lens)
                .zip(need)
                .map(|((xi, &len), &n)| {
                    let start = at;
                    at += len;
                    n.then(|| {
                        let mut gi = Tensor::zeros(xi.shape());
                        copy_axis(g, start, &mut gi, 0, len, axis);
                        gi
                    })
                })
                .collect()
        }))
    }
}

fn transpose<T: Scalar>(x: &Tensor<T>, r: usize, c: usize) -> Tensor<T> {
    let src = x.data();
    let mut data = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = src[i * c + j];
        }
    }
    Tensor::from_vec(&[c, r], data).expect("transpose shape")
}
