use crate::error::{arg_err, Result};
use crate::nn::{module_fields, BatchNorm2d, Conv2d, Init, LayerNorm, Linear, Mode};
use crate::tensor::{cost, Graph, Scalar, Var};

/// Three 3×3 conv–BN–GELU layers; the first has stride 2.
#[derive(Clone, Debug)]
pub struct ConvStem<T: Scalar> {
    pub convs: Vec<Conv2d<T>>,
    pub bns: Vec<BatchNorm2d<T>>,
}

impl<T: Scalar> ConvStem<T> {
    pub fn new(init: &mut Init, name: &str, in_channels: usize, width: usize) -> Self {
        let mut convs = Vec::with_capacity(3);
        let mut bns = Vec::with_capacity(3);
        for i in 0..3 {
            let (cin, stride) = if i == 0 { (in_channels, 2) } else { (width, 1) };
            convs.push(Conv2d::new(init, &format!("{name}.conv{i}"), cin, width, 3, stride, 1, false));
            bns.push(BatchNorm2d::new(init, &format!("{name}.bn{i}"), width));
        }
        Self { convs, bns }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>, mode: Mode) -> Result<Var<'g, T>> {
        let (_, _, h, w) = x.value().dims4("conv_stem")?;
        if h < 2 || w < 2 {
            return Err(arg_err("conv_stem", format!("input {h}x{w} is too small")));
        }
        cost::scope("stem", || {
            let mut x = x;
            for (conv, bn) in self.convs.iter().zip(&self.bns) {
                x = bn.forward(g, conv.forward(g, x)?, mode)?.gelu();
            }
            Ok(x)
        })
    }
}

module_fields!(ConvStem { convs, bns });

/// Strided convolution into a stage's width, then a channel LayerNorm.
#[derive(Clone, Debug)]
pub struct PatchEmbed<T: Scalar> {
    pub conv: Conv2d<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Scalar> PatchEmbed<T> {
    /// `patch` is both kernel and stride.
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, patch: usize) -> Self {
        Self {
            conv: Conv2d::new(init, &format!("{name}.conv"), cin, cout, patch, patch, 0, true),
            norm: LayerNorm::new(init, &format!("{name}.norm"), cout),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (_, _, h, w) = x.value().dims4("patch_embed")?;
        let p = self.conv.stride;
        if h < p || w < p || h % p != 0 || w % p != 0 {
            return Err(arg_err("patch_embed", format!("{h}x{w} map is not divisible into {p}x{p} patches")));
        }
        cost::scope("patch_embed", || self.norm.forward(g, self.conv.forward(g, x)?))
    }
}

module_fields!(PatchEmbed { conv, norm });

/// Global average pooling followed by a linear classifier.
#[derive(Clone, Debug)]
pub struct ClassifierHead<T: Scalar> {
    pub fc: Linear<T>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new(init: &mut Init, name: &str, channels: usize, num_classes: usize) -> Self {
        Self {
            fc: Linear::new(init, &format!("{name}.fc"), channels, num_classes, true),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        cost::scope("head", || self.fc.forward(g, x.global_avg_pool()?))
    }
}

module_fields!(ClassifierHead { fc });

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_module, Module};
    use crate::tensor::Tensor;

    #[test]
    fn stem_shapes() {
        let g = Graph::<f32>::no_grad();
        for (width, res, out) in [(32, 224, 112), (16, 224, 112), (24, 32, 16)] {
            let stem = ConvStem::new(&mut Init::new(0), "stem", 3, width);
            let y = stem.forward(&g, g.constant(Tensor::zeros(&[1, 3, res, res])), Mode::Eval).unwrap();
            assert_eq!(y.shape(), vec![1, width, out, out]);
        }
        let stem = ConvStem::<f32>::new(&mut Init::new(0), "stem", 3, 8);
        assert!(stem.forward(&g, g.constant(Tensor::zeros(&[1, 3, 1, 4])), Mode::Eval).is_err());
    }

    #[test]
    fn patch_embed_shapes_and_count() {
        let g = Graph::<f32>::no_grad();
        let pe = PatchEmbed::new(&mut Init::new(0), "pe", 32, 64, 2);
        let y = pe.forward(&g, g.constant(Tensor::zeros(&[1, 32, 112, 112]))).unwrap();
        assert_eq!(y.shape(), vec![1, 64, 56, 56]);
        let pe = PatchEmbed::new(&mut Init::new(0), "pe", 256, 512, 2);
        let y = pe.forward(&g, g.constant(Tensor::zeros(&[1, 256, 14, 14]))).unwrap();
        assert_eq!(y.shape(), vec![1, 512, 7, 7]);
        assert_eq!(pe.num_params(), 524_800 + 2 * 512);
        assert!(pe.forward(&g, g.constant(Tensor::zeros(&[1, 256, 7, 7]))).is_err());
    }

    #[test]
    fn head_on_constant_and_zero_weights() {
        let g = Graph::<f64>::no_grad();
        let x = g.constant(Tensor::full(&[2, 3, 4, 4], 1.5));
        assert_eq!(x.global_avg_pool().unwrap().to_tensor(), Tensor::full(&[2, 3], 1.5));
        let mut head = ClassifierHead::<f64>::new(&mut Init::new(0), "head", 3, 4);
        head.fc.weight.value.data_mut().fill(0.0);
        head.fc.bias.as_mut().unwrap().value = Tensor::from_f64(&[4], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = head.forward(&g, g.constant(Tensor::from_f64(&[1, 3, 1, 2], &[1., 2., 3., 4., 5., 6.]).unwrap())).unwrap();
        assert_eq!(y.to_tensor().to_f64_vec(), vec![0.1, 0.2, 0.3, 0.4]);
        let head = ClassifierHead::<f32>::new(&mut Init::new(0), "head", 512, 100);
        let g = Graph::no_grad();
        let y = head.forward(&g, g.constant(Tensor::zeros(&[1, 512, 7, 7]))).unwrap();
        assert_eq!(y.shape(), vec![1, 100]);
    }

    #[test]
    fn stem_gradient() {
        let mut stem = ConvStem::<f64>::new(&mut Init::new(0), "stem", 3, 2);
        let mut init = Init::new(3);
        stem.visit_mut(&mut |p| p.value = init.trunc_normal(p.value.shape(), 0.5));
        let x = init.trunc_normal(&[1, 3, 6, 6], 1.0);
        let err = check_module(&mut stem, &[x], 1e-5, |m, g, v| m.forward(g, v[0], Mode::Eval)).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
