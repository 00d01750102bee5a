use std::borrow::Cow;

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{cost, Scalar, Tensor, Var};

/// Output extent of a convolution along one axis, or `None` when the
/// kernel does not fit.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (kernel >= 1 && stride >= 1 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(
        op: &'static str,
        c: usize,
        h: usize,
        w: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(arg_err(op, "stride must be at least 1"));
        }
        match (conv_out_size(h, kh, stride, pad), conv_out_size(w, kw, stride, pad)) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(Self { c, h, w, kh, kw, stride, pad, ho, wo }),
            _ => Err(arg_err(
                op,
                format!("{kh}x{kw} kernel, stride {stride}, padding {pad} gives no output on {h}x{w}"),
            )),
        }
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate read by output `o` at kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad).filter(|&i| i < extent)
    }
}

/// Unfolds one image `[C, H, W]` into `[C·kh·kw, Ho·Wo]` columns.
fn im2col<'a, T: Scalar>(x: &'a [T], g: &Geom) -> Cow<'a, [T]> {
    if g.pointwise() {
        return Cow::Borrowed(x);
    }
    let cols = g.ho * g.wo;
    let mut out = vec![T::zero(); g.c * g.kh * g.kw * cols];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut out[((c * g.kh + ki) * g.kw + kj) * cols..][..cols];
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, ki, g.h) else { continue };
                    let src = &x[(c * g.h + iy) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        if let Some(ix) = g.src(ox, kj, g.w) {
                            row[oy * g.wo + ox] = src[ix];
                        }
                    }
                }
            }
        }
    }
    Cow::Owned(out)
}

/// Adjoint of [`im2col`]: scatters columns back onto `dx` (`[C, H, W]`).
fn col2im<T: Scalar>(col: &[T], g: &Geom, dx: &mut [T]) {
    let cols = g.ho * g.wo;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &col[((c * g.kh + ki) * g.kw + kj) * cols..][..cols];
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, ki, g.h) else { continue };
                    let dst = &mut dx[(c * g.h + iy) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        if let Some(ix) = g.src(ox, kj, g.w) {
                            dst[ix] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<Var<'_, T>>, c: usize) -> Result<()> {
    match bias {
        Some(b) if b.value().shape() != [c] => {
            Err(shape_err(op, format!("bias {:?} for {c} output channels", b.value().shape())))
        }
        _ => Ok(()),
    }
}

fn bias_grad<T: Scalar>(g: &Tensor<T>, c: usize, plane: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); c];
    for (i, chunk) in g.data().chunks(plane).enumerate() {
        db[i % c] += chunk.iter().copied().sum::<T>();
    }
    Tensor::from_vec(&[c], db).expect("bias shape")
}

fn add_bias<T: Scalar>(out: &mut Tensor<T>, bias: Option<Var<'_, T>>, c: usize, plane: usize) {
    if let Some(b) = bias {
        let b = b.value();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let v = b.data()[i % c];
            chunk.iter_mut().for_each(|o| *o += v);
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Dense 2-D cross-correlation. `weight` is `[Cout, Cin, kh, kw]`;
    /// the same stride and zero padding apply to both spatial axes.
    pub fn conv2d(
        self,
        weight: Var<'g, T>,
        bias: Option<Var<'g, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g, T>> {
        let (x, w) = (self.value(), weight.value());
        let (n, cin, h, wd) = x.dims4("conv2d")?;
        let (cout, wcin, kh, kw) = w.dims4("conv2d")?;
        if wcin != cin {
            return Err(shape_err("conv2d", format!("input has {cin} channels, weight expects {wcin}")));
        }
        check_bias("conv2d", bias, cout)?;
        let geo = Geom::new("conv2d", cin, h, wd, (kh, kw), stride, padding)?;
        let (kdim, cols) = (cin * kh * kw, geo.ho * geo.wo);
        let mut out = Tensor::zeros(&[n, cout, geo.ho, geo.wo]);
        for b in 0..n {
            let col = im2col(&x.data()[b * cin * h * wd..][..cin * h * wd], &geo);
            T::gemm(
                cout, kdim, cols, T::one(),
                w.data(), (kdim, 1),
                &col, (cols, 1),
                T::zero(),
                &mut out.data_mut()[b * cout * cols..][..cout * cols], (cols, 1),
            );
        }
        add_bias(&mut out, bias, cout, cols);
        cost::add((n * cout * kdim * cols) as u64);
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.graph().record("conv2d", &inputs, out, move |x, _, g, need| {
            let plane = cin * h * wd;
            let mut dx = need[0].then(|| Tensor::zeros(x[0].shape()));
            let mut dw = need[1].then(|| Tensor::zeros(x[1].shape()));
            let mut dcol = vec![T::zero(); if dx.is_some() { kdim * cols } else { 0 }];
            for b in 0..n {
                let gb = &g.data()[b * cout * cols..][..cout * cols];
                if let Some(dw) = &mut dw {
                    let col = im2col(&x[0].data()[b * plane..][..plane], &geo);
                    T::gemm(
                        cout, cols, kdim, T::one(),
                        gb, (cols, 1),
                        &col, (1, cols),
                        T::one(),
                        dw.data_mut(), (kdim, 1),
                    );
                }
                if let Some(dx) = &mut dx {
                    T::gemm(
                        kdim, cout, cols, T::one(),
                        x[1].data(), (1, kdim),
                        gb, (cols, 1),
                        T::zero(),
                        &mut dcol, (cols, 1),
                    );
                    let dxb = &mut dx.data_mut()[b * plane..][..plane];
                    if geo.pointwise() {
                        dxb.copy_from_slice(&dcol);
                    } else {
                        col2im(&dcol, &geo, dxb);
                    }
                }
            }
            let mut grads = vec![dx, dw];
            if x.len() == 3 {
                grads.push(need[2].then(|| bias_grad(g, cout, cols)));
            }
            grads
        }))
    }

    /// Per-channel 2-D cross-correlation; `weight` is `[C, 1, kh, kw]`.
    pub fn depthwise_conv2d(
        self,
        weight: Var<'g, T>,
        bias: Option<Var<'g, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g, T>> {
        let (x, w) = (self.value(), weight.value());
        let (n, c, h, wd) = x.dims4("depthwise_conv2d")?;
        let (wc, one, kh, kw) = w.dims4("depthwise_conv2d")?;
        if wc != c || one != 1 {
            return Err(shape_err(
                "depthwise_conv2d",
                format!("input has {c} channels, weight is {:?} (expected [{c}, 1, kh, kw])", w.shape()),
            ));
        }
        check_bias("depthwise_conv2d", bias, c)?;
        let geo = Geom::new("depthwise_conv2d", c, h, wd, (kh, kw), stride, padding)?;
        let (plane, oplane, taps) = (h * wd, geo.ho * geo.wo, kh * kw);
        let mut out = Tensor::zeros(&[n, c, geo.ho, geo.wo]);
        {
            let (xd, wdat, od) = (x.data(), w.data(), out.data_mut());
            for img in 0..n * c {
                let ch = img % c;
                let (src, dst) = (&xd[img * plane..][..plane], &mut od[img * oplane..][..oplane]);
                let filt = &wdat[ch * taps..][..taps];
                for oy in 0..geo.ho {
                    for ki in 0..kh {
                        let Some(iy) = geo.src(oy, ki, h) else { continue };
                        let row = &src[iy * wd..][..wd];
                        for kj in 0..kw {
                            let f = filt[ki * kw + kj];
                            for ox in 0..geo.wo {
                                if let Some(ix) = geo.src(ox, kj, wd) {
                                    dst[oy * geo.wo + ox] += f * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        add_bias(&mut out, bias, c, oplane);
        cost::add((n * c * oplane * taps) as u64);
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.graph().record("depthwise_conv2d", &inputs, out, move |x, _, g, need| {
            let mut dx = need[0].then(|| Tensor::zeros(x[0].shape()));
            let mut dw = need[1].then(|| Tensor::zeros(x[1].shape()));
            let (xd, wdat, gd) = (x[0].data(), x[1].data(), g.data());
            for img in 0..n * c {
                let ch = img % c;
                let gi = &gd[img * oplane..][..oplane];
                for oy in 0..geo.ho {
                    for ki in 0..kh {
                        let Some(iy) = geo.src(oy, ki, h) else { continue };
                        for kj in 0..kw {
                            let tap = ch * taps + ki * kw + kj;
                            let f = wdat[tap];
                            let mut acc = T::zero();
                            for ox in 0..geo.wo {
                                if let Some(ix) = geo.src(ox, kj, wd) {
                                    let gv = gi[oy * geo.wo + ox];
                                    let at = img * plane + iy * wd + ix;
                                    if let Some(dx) = &mut dx {
                                        dx.data_mut()[at] += f * gv;
                                    }
                                    acc += xd[at] * gv;
                                }
                            }
                            if let Some(dw) = &mut dw {
                                dw.data_mut()[tap] += acc;
                            }
                        }
                    }
                }
            }
            let mut grads = vec![dx, dw];
            if x.len() == 3 {
                grads.push(need[2].then(|| bias_grad(g, c, oplane)));
            }
            grads
        }))
    }

    /// Zero-pads the bottom and right edges of a feature map.
    pub fn zero_pad2d(self, bottom: usize, right: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("zero_pad2d")?;
        if bottom == 0 && right == 0 {
            return Ok(self);
        }
        let (h2, w2) = (h + bottom, w + right);
        let mut out = Tensor::zeros(&[n, c, h2, w2]);
        for img in 0..n * c {
            for y in 0..h {
                out.data_mut()[(img * h2 + y) * w2..][..w]
                    .copy_from_slice(&x.data()[(img * h + y) * w..][..w]);
            }
        }
        Ok(self.graph().record("zero_pad2d", &[self], out, move |_, _, g, _| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for img in 0..n * c {
                for y in 0..h {
                    dx.data_mut()[(img * h + y) * w..][..w]
                        .copy_from_slice(&g.data()[(img * h2 + y) * w2..][..w]);
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Spatial mean per channel: `[B, C, H, W] → [B, C]`.
    pub fn global_avg_pool(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = T::one() / T::from_f64(plane as f64);
        let data = x.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::from_vec(&[n, c], data)?;
        Ok(self.graph().record("global_avg_pool", &[self], out, move |_, _, g, _| {
            let mut dx = Vec::with_capacity(n * c * plane);
            for &gv in g.data() {
                dx.extend(std::iter::repeat_n(gv * inv, plane));
            }
            vec![Some(Tensor::from_vec(&[n, c, h, w], dx).expect("pool grad shape"))]
        }))
    }
}
