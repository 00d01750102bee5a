use super::Lmssa;
use crate::error::{arg_err, Result};
use crate::nn::{module_fields, Conv2d, Init, LayerNorm};
use crate::tensor::{cost, Graph, Scalar, Var};
use crate::wavelet::WtConv;

/// Convolutional feature fusion: the first `conv_channels` channels go
/// through wavelet convolution, a `k×k` convolution, a norm and GELU; the
/// rest go through attention. Outputs are concatenated, conv path first.
///
/// With `conv_channels == 0` the whole input goes through attention.
#[derive(Clone, Debug)]
pub struct Cff<T: Scalar> {
    pub conv_channels: usize,
    pub wt: Option<WtConv<T>>,
    pub conv: Option<Conv2d<T>>,
    pub norm: Option<LayerNorm<T>>,
    pub attn: Lmssa<T>,
}

impl<T: Scalar> Cff<T> {
    /// `attn` must cover the `channels − conv_channels` attention channels.
    pub fn new(
        init: &mut Init,
        name: &str,
        channels: usize,
        conv_channels: usize,
        kernel: usize,
        padding: usize,
        attn: Lmssa<T>,
    ) -> Result<Self> {
        if conv_channels >= channels || attn.dim != channels - conv_channels {
            return Err(arg_err(
                "cff",
                format!("split {conv_channels}/{} of {channels} channels leaves an empty or mismatched path", attn.dim),
            ));
        }
        if conv_channels > 0 && 2 * padding + 1 != kernel {
            return Err(arg_err("cff", format!("kernel {kernel} with padding {padding} does not preserve size")));
        }
        let c = conv_channels;
        let (wt, conv, norm) = if c > 0 {
            (
                Some(WtConv::new(init, &format!("{name}.wt"), c)),
                Some(Conv2d::new(init, &format!("{name}.conv"), c, c, kernel, 1, padding, true)),
                Some(LayerNorm::new(init, &format!("{name}.norm"), c)),
            )
        } else {
            (None, None, None)
        };
        Ok(Self { conv_channels, wt, conv, norm, attn })
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (Some(wt), Some(conv), Some(norm)) = (&self.wt, &self.conv, &self.norm) else {
            return self.attn.forward(g, x);
        };
        let c = self.conv_channels;
        let conv_path = cost::scope("cff_conv", || {
            let xc = x.narrow(1, 0, c)?;
            norm.forward(g, conv.forward(g, wt.forward(g, xc)?)?).map(Var::gelu)
        })?;
        let attn_in = x.narrow(1, c, self.attn.dim)?;
        let attn_path = self.attn.forward(g, attn_in)?;
        Var::concat(&[conv_path, attn_path], 1)
    }
}

module_fields!(Cff { wt, conv, norm, attn });
