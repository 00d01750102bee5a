use crate::error::Result;
use crate::nn::{module_fields, BatchNorm2d, DepthwiseConv2d, Init, Mode};
use crate::tensor::{cost, Graph, Scalar, Var};

/// Local feature extraction: `dw2(GELU(BN(dw1(x))) + x)` with a 3×3
/// depthwise `dw1` and a 1×1 depthwise `dw2`.
#[derive(Clone, Debug)]
pub struct Lfe<T: Scalar> {
    pub dw1: DepthwiseConv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub dw2: DepthwiseConv2d<T>,
}

impl<T: Scalar> Lfe<T> {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Self {
        Self {
            dw1: DepthwiseConv2d::new(init, &format!("{name}.dw1"), channels, 3, 1, 1, true),
            bn: BatchNorm2d::new(init, &format!("{name}.bn"), channels),
            dw2: DepthwiseConv2d::new(init, &format!("{name}.dw2"), channels, 1, 1, 0, true),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>, mode: Mode) -> Result<Var<'g, T>> {
        cost::scope("lfe", || {
            let inner = self.bn.forward(g, self.dw1.forward(g, x)?, mode)?.gelu();
            self.dw2.forward(g, inner.add(x)?)
        })
    }
}

module_fields!(Lfe { dw1, bn, dw2 });

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_module, Module};
    use crate::tensor::Tensor;

    fn seq(shape: &[usize], k: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + 1.0) * k).sin()).collect()).unwrap()
    }

    #[test]
    fn identity_configuration_returns_input() {
        let mut lfe = Lfe::<f64>::new(&mut Init::new(0), "lfe", 4);
        lfe.dw1.weight.value.data_mut().fill(0.0);
        lfe.dw2.weight.value.data_mut().fill(1.0);
        lfe.dw2.bias.as_mut().unwrap().value.data_mut().fill(0.0);
        // Fresh running stats (mean 0, var 1) make eval-mode BN the identity
        // up to its epsilon; with zero dw1 output, GELU(0) = 0 regardless.
        let g = Graph::no_grad();
        let x = seq(&[2, 4, 5, 5], 0.3);
        let y = lfe.forward(&g, g.constant(x.clone()), Mode::Eval).unwrap().to_tensor();
        assert!(y.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn preserves_stage_one_shape() {
        let lfe = Lfe::<f32>::new(&mut Init::new(0), "lfe", 64);
        let g = Graph::no_grad();
        let y = lfe.forward(&g, g.constant(Tensor::zeros(&[1, 64, 56, 56])), Mode::Eval).unwrap();
        assert_eq!(y.shape(), vec![1, 64, 56, 56]);
    }

    #[test]
    fn gradient() {
        let mut init = Init::new(1);
        let mut lfe = Lfe::<f64>::new(&mut init, "lfe", 3);
        lfe.visit_mut(&mut |p| p.value = init.trunc_normal(p.value.shape(), 0.7));
        let err = check_module(&mut lfe, &[seq(&[2, 3, 4, 4], 0.7)], 1e-5, |m, g, v| m.forward(g, v[0], Mode::Eval)).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
