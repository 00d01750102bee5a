//! Single-level orthonormal 2-D Haar transform and wavelet-domain convolution.
//!
//! For each 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2     lh = (a − b + c − d) / 2
//! hl = (a + b − c − d) / 2     hh = (a − b − c + d) / 2
//! ```
//!
//! The transform matrix is orthonormal and symmetric, so the inverse applies
//! the same butterfly and each direction's adjoint is the other direction.

mod wtconv;

pub use wtconv::WtConv;

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// The four half-resolution sub-bands of a feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBands<T: Scalar> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
    /// Spatial size of the source before any odd-size padding.
    pub source_size: (usize, usize),
}

impl<T: Scalar> WaveletBands<T> {
    /// Sum of squared coefficients over all four bands.
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|b| b.data().iter())
            .map(|v| v.to_f64().powi(2))
            .sum()
    }

    /// Bands stacked along the channel axis as `[B, 4C, h, w]`, band-major.
    pub fn pack(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.ll.dims4("WaveletBands::pack")?;
        for b in [&self.lh, &self.hl, &self.hh] {
            if b.shape() != self.ll.shape() {
                return Err(shape_err("WaveletBands::pack", format!("{:?} vs {:?}", b.shape(), self.ll.shape())));
            }
        }
        let plane = c * h * w;
        let mut data = Vec::with_capacity(4 * n * plane);
        for b in 0..n {
            for band in [&self.ll, &self.lh, &self.hl, &self.hh] {
                data.extend_from_slice(&band.data()[b * plane..][..plane]);
            }
        }
        Tensor::from_vec(&[n, 4 * c, h, w], data)
    }

    pub fn unpack(packed: &Tensor<T>, source_size: (usize, usize)) -> Result<Self> {
        let (n, c4, h, w) = packed.dims4("WaveletBands::unpack")?;
        if c4 % 4 != 0 {
            return Err(shape_err("WaveletBands::unpack", format!("{c4} channels is not a multiple of 4")));
        }
        let c = c4 / 4;
        let plane = c * h * w;
        let mut bands: Vec<Vec<T>> = (0..4).map(|_| Vec::with_capacity(n * plane)).collect();
        for b in 0..n {
            for (k, band) in bands.iter_mut().enumerate() {
                band.extend_from_slice(&packed.data()[(b * 4 + k) * plane..][..plane]);
            }
        }
        let mut it = bands.into_iter().map(|d| Tensor::from_vec(&[n, c, h, w], d));
        Ok(Self {
            ll: it.next().expect("four bands")?,
            lh: it.next().expect("four bands")?,
            hl: it.next().expect("four bands")?,
            hh: it.next().expect("four bands")?,
            source_size,
        })
    }
}

/// Forward transform of an even-sized `[B, C, H, W]` buffer into packed bands.
fn dwt_packed<T: Scalar>(x: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let half: T = T::from_f64(0.5);
    let band = c * h2 * w2;
    let mut out = vec![T::zero(); n * 4 * band];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * h * w..][..h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    let a = src[2 * i * w + 2 * j];
                    let bb = src[2 * i * w + 2 * j + 1];
                    let cc = src[(2 * i + 1) * w + 2 * j];
                    let d = src[(2 * i + 1) * w + 2 * j + 1];
                    let at = |k: usize| b * 4 * band + k * band + ch * h2 * w2 + i * w2 + j;
                    out[at(0)] = (a + bb + cc + d) * half;
                    out[at(1)] = (a - bb + cc - d) * half;
                    out[at(2)] = (a + bb - cc - d) * half;
                    out[at(3)] = (a - bb - cc + d) * half;
                }
            }
        }
    }
    out
}

/// Inverse of [`dwt_packed`]; `c` is the channel count of the output.
fn idwt_packed<T: Scalar>(p: &[T], n: usize, c: usize, h2: usize, w2: usize) -> Vec<T> {
    let (h, w) = (2 * h2, 2 * w2);
    let half: T = T::from_f64(0.5);
    let band = c * h2 * w2;
    let mut out = vec![T::zero(); n * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            let dst = &mut out[(b * c + ch) * h * w..][..h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    let at = |k: usize| b * 4 * band + k * band + ch * h2 * w2 + i * w2 + j;
                    let (ll, lh, hl, hh) = (p[at(0)], p[at(1)], p[at(2)], p[at(3)]);
                    dst[2 * i * w + 2 * j] = (ll + lh + hl + hh) * half;
                    dst[2 * i * w + 2 * j + 1] = (ll - lh + hl - hh) * half;
                    dst[(2 * i + 1) * w + 2 * j] = (ll + lh - hl - hh) * half;
                    dst[(2 * i + 1) * w + 2 * j + 1] = (ll - lh - hl + hh) * half;
                }
            }
        }
    }
    out
}

/// Index read by padded coordinate `i` when extending an axis of length
/// `len` by reflection.
fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        (2 * len).saturating_sub(i + 2).min(len - 1)
    }
}

fn reflect_pad<T: Scalar>(x: &Tensor<T>, bottom: usize, right: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("reflect_pad2d")?;
    let (h2, w2) = (h + bottom, w + right);
    let mut data = Vec::with_capacity(n * c * h2 * w2);
    for img in x.data().chunks(h * w) {
        for i in 0..h2 {
            let row = &img[reflect(i, h) * w..][..w];
            data.extend((0..w2).map(|j| row[reflect(j, w)]));
        }
    }
    Tensor::from_vec(&[n, c, h2, w2], data)
}

/// Analysis transform. Odd extents are first reflect-padded by one row or
/// column; [`haar_idwt2d`] crops them away again.
pub fn haar_dwt2d<T: Scalar>(x: &Tensor<T>) -> Result<WaveletBands<T>> {
    let (_, _, h, w) = x.dims4("haar_dwt2d")?;
    if h == 0 || w == 0 {
        return Err(arg_err("haar_dwt2d", "zero spatial extent"));
    }
    let padded = reflect_pad(x, h % 2, w % 2)?;
    let (n, c, hp, wp) = padded.dims4("haar_dwt2d")?;
    let packed = Tensor::from_vec(&[n, 4 * c, hp / 2, wp / 2], dwt_packed(padded.data(), n, c, hp, wp))?;
    WaveletBands::unpack(&packed, (h, w))
}

/// Synthesis transform, cropping to the recorded source size.
pub fn haar_idwt2d<T: Scalar>(bands: &WaveletBands<T>) -> Result<Tensor<T>> {
    let packed = bands.pack()?;
    let (n, c4, h2, w2) = packed.dims4("haar_idwt2d")?;
    let c = c4 / 4;
    let full = Tensor::from_vec(&[n, c, 2 * h2, 2 * w2], idwt_packed(packed.data(), n, c, h2, w2))?;
    let (h, w) = bands.source_size;
    if (h, w) == (2 * h2, 2 * w2) {
        return Ok(full);
    }
    if h > 2 * h2 || w > 2 * w2 {
        return Err(shape_err("haar_idwt2d", format!("source size {h}x{w} exceeds {}x{}", 2 * h2, 2 * w2)));
    }
    let mut data = Vec::with_capacity(n * c * h * w);
    for img in full.data().chunks(4 * h2 * w2) {
        for i in 0..h {
            data.extend_from_slice(&img[i * 2 * w2..][..w]);
        }
    }
    Tensor::from_vec(&[n, c, h, w], data)
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Differentiable analysis transform of an even-sized map into packed
    /// bands `[B, 4C, H/2, W/2]` (order ll, lh, hl, hh).
    pub fn haar_dwt(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("haar_dwt")?;
        if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(arg_err("haar_dwt", format!("needs even, non-zero extents, got {h}x{w}")));
        }
        let out = Tensor::from_vec(&[n, 4 * c, h / 2, w / 2], dwt_packed(x.data(), n, c, h, w))?;
        Ok(self.graph().record("haar_dwt", &[self], out, move |_, _, g, _| {
            let dx = idwt_packed(g.data(), n, c, h / 2, w / 2);
            vec![Some(Tensor::from_vec(&[n, c, h, w], dx).expect("dwt grad shape"))]
        }))
    }

    /// Differentiable synthesis transform of packed bands.
    pub fn haar_idwt(self) -> Result<Var<'g, T>> {
        let p = self.value();
        let (n, c4, h2, w2) = p.dims4("haar_idwt")?;
        if c4 % 4 != 0 {
            return Err(shape_err("haar_idwt", format!("{c4} channels is not a multiple of 4")));
        }
        let c = c4 / 4;
        let out = Tensor::from_vec(&[n, c, 2 * h2, 2 * w2], idwt_packed(p.data(), n, c, h2, w2))?;
        Ok(self.graph().record("haar_idwt", &[self], out, move |_, _, g, _| {
            let dp = dwt_packed(g.data(), n, c, 2 * h2, 2 * w2);
            vec![Some(Tensor::from_vec(&[n, c4, h2, w2], dp).expect("idwt grad shape"))]
        }))
    }

    /// Extends the bottom and right edges by mirror reflection (the edge
    /// row or column itself is not repeated).
    pub fn reflect_pad2d(self, bottom: usize, right: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("reflect_pad2d")?;
        if bottom == 0 && right == 0 {
            return Ok(self);
        }
        if bottom >= h.max(2) || right >= w.max(2) {
            return Err(arg_err("reflect_pad2d", format!("padding {bottom},{right} too large for {h}x{w}")));
        }
        let out = reflect_pad(&x, bottom, right)?;
        let (h2, w2) = (h + bottom, w + right);
        Ok(self.graph().record("reflect_pad2d", &[self], out, move |_, _, g, _| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for (gi, di) in g.data().chunks(h2 * w2).zip(dx.data_mut().chunks_mut(h * w)) {
                for i in 0..h2 {
                    for j in 0..w2 {
                        di[reflect(i, h) * w + reflect(j, w)] += gi[i * w2 + j];
                    }
                }
            }
            vec![Some(dx)]
        }))
    }
}
