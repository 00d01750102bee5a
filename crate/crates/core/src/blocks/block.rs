use super::{AttentionKind, Cff, Lfe, Lmssa};
use crate::error::Result;
use crate::nn::{module_fields, Init, LayerNorm, Linear, Mode};
use crate::tensor::{cost, Graph, Scalar, Var};

/// Two-layer pointwise MLP with GELU.
#[derive(Clone, Debug)]
pub struct Ffn<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Ffn<T> {
    pub fn new(init: &mut Init, name: &str, channels: usize, ratio: usize) -> Self {
        Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), channels, channels * ratio, true),
            fc2: Linear::new(init, &format!("{name}.fc2"), channels * ratio, channels, true),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        cost::scope("ffn", || self.fc2.forward(g, self.fc1.forward(g, x)?.gelu()))
    }
}

module_fields!(Ffn { fc1, fc2 });

/// Everything needed to construct one transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub channels: usize,
    pub rs: Vec<usize>,
    /// Channels routed to the convolution path of the fusion layer; 0
    /// disables that path.
    pub conv_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub ffn_ratio: usize,
    pub head_dim: usize,
    pub attention: AttentionKind,
    pub lfe: bool,
}

/// `x₁ = x + lfe(x)`, `x₂ = x₁ + cff(norm₁(x₁))`, `x₃ = x₂ + ffn(norm₂(x₂))`.
#[derive(Clone, Debug)]
pub struct MscBlock<T: Scalar> {
    pub lfe: Option<Lfe<T>>,
    pub norm1: LayerNorm<T>,
    pub cff: Cff<T>,
    pub norm2: LayerNorm<T>,
    pub ffn: Ffn<T>,
}

impl<T: Scalar> MscBlock<T> {
    pub fn new(init: &mut Init, name: &str, spec: &BlockSpec) -> Result<Self> {
        let c = spec.channels;
        let lfe = spec.lfe.then(|| Lfe::new(init, &format!("{name}.lfe"), c));
        let norm1 = LayerNorm::new(init, &format!("{name}.norm1"), c);
        let attn = Lmssa::new(
            init,
            &format!("{name}.cff.attn"),
            c - spec.conv_channels.min(c),
            &spec.rs,
            spec.head_dim,
            spec.attention,
        )?;
        let cff = Cff::new(init, &format!("{name}.cff"), c, spec.conv_channels, spec.kernel, spec.padding, attn)?;
        let norm2 = LayerNorm::new(init, &format!("{name}.norm2"), c);
        let ffn = Ffn::new(init, &format!("{name}.ffn"), c, spec.ffn_ratio);
        Ok(Self { lfe, norm1, cff, norm2, ffn })
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>, mode: Mode) -> Result<Var<'g, T>> {
        let x1 = match &self.lfe {
            Some(lfe) => x.add(lfe.forward(g, x, mode)?)?,
            None => x,
        };
        let x2 = x1.add(self.cff.forward(g, self.norm1.forward(g, x1)?)?)?;
        x2.add(self.ffn.forward(g, self.norm2.forward(g, x2)?)?)
    }
}

module_fields!(MscBlock { lfe, norm1, cff, norm2, ffn });
