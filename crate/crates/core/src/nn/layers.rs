use super::{module_fields, Init, Mode, Module};
use crate::error::Result;
use crate::tensor::{BnStats, Graph, Param, Scalar, Var};

/// Dense convolution with square kernel, stride and padding.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Self {
            weight: init.weight(format!("{name}.weight"), &[cout, cin, kernel, kernel]),
            bias: bias.then(|| init.zeros(format!("{name}.bias"), &[cout])),
            stride,
            padding,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.conv2d(g.param(&self.weight), self.bias.as_ref().map(|b| g.param(b)), self.stride, self.padding)
    }
}

module_fields!(Conv2d { weight, bias });

/// One filter per channel.
#[derive(Clone, Debug)]
pub struct DepthwiseConv2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> DepthwiseConv2d<T> {
    pub fn new(
        init: &mut Init,
        name: &str,
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Self {
            weight: init.weight(format!("{name}.weight"), &[channels, 1, kernel, kernel]),
            bias: bias.then(|| init.zeros(format!("{name}.bias"), &[channels])),
            stride,
            padding,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.depthwise_conv2d(g.param(&self.weight), self.bias.as_ref().map(|b| g.param(b)), self.stride, self.padding)
    }
}

module_fields!(DepthwiseConv2d { weight, bias });

/// Linear map over the channel axis (a 1×1 convolution on feature maps).
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        Self {
            weight: init.weight(format!("{name}.weight"), &[cout, cin]),
            bias: bias.then(|| init.zeros(format!("{name}.bias"), &[cout])),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.channel_linear(g.param(&self.weight), self.bias.as_ref().map(|b| g.param(b)))
    }
}

module_fields!(Linear { weight, bias });

#[derive(Clone, Debug)]
pub struct LayerNorm<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Self {
        Self {
            gamma: init.ones(format!("{name}.weight"), &[channels]),
            beta: init.zeros(format!("{name}.bias"), &[channels]),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.layer_norm(g.param(&self.gamma), g.param(&self.beta))
    }
}

module_fields!(LayerNorm { gamma, beta });

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T: Scalar> {
    pub name: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub stats: BnStats<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: init.ones(format!("{name}.weight"), &[channels]),
            beta: init.zeros(format!("{name}.bias"), &[channels]),
            stats: BnStats::new(channels),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>, mode: Mode) -> Result<Var<'g, T>> {
        x.batch_norm2d(g.param(&self.gamma), g.param(&self.beta), &self.stats, mode.training())
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &BnStats<T>)) {
        f(&self.name, &self.stats);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_64_to_64_has_4160_params() {
        let l = Linear::<f32>::new(&mut Init::new(0), "fc", 64, 64, true);
        assert_eq!(l.num_params(), 4160);
    }

    #[test]
    fn patch_embed_sized_conv_count() {
        let c = Conv2d::<f32>::new(&mut Init::new(0), "pe", 256, 512, 2, 2, 0, true);
        assert_eq!(c.num_params(), 524_800);
    }

    #[test]
    fn no_decay_marks_affines_and_biases() {
        let mut init = Init::new(0);
        let l = Linear::<f32>::new(&mut init, "fc", 4, 4, true);
        let n = LayerNorm::<f32>::new(&mut init, "ln", 4);
        let mut flags = Vec::new();
        l.visit(&mut |p| flags.push((p.name.clone(), p.no_decay)));
        n.visit(&mut |p| flags.push((p.name.clone(), p.no_decay)));
        assert_eq!(
            flags,
            vec![
                ("fc.weight".into(), false),
                ("fc.bias".into(), true),
                ("ln.weight".into(), true),
                ("ln.bias".into(), true),
            ]
        );
    }
}
