use crate::error::{shape_err, Result};
use crate::nn::{module_fields, DepthwiseConv2d, Init};
use crate::tensor::{Graph, Scalar, Var};

/// Wavelet-domain convolution: Haar analysis, a 3×3 depthwise filter on every
/// sub-band of every channel, synthesis, and a residual add of the input.
/// Output shape equals input shape; odd extents are handled by reflection
/// padding and cropping.
#[derive(Clone, Debug)]
pub struct WtConv<T: Scalar> {
    pub channels: usize,
    /// Depthwise filters over the packed `4·channels` band maps
    /// (ll, lh, hl, hh for all channels in that order).
    pub band_conv: DepthwiseConv2d<T>,
}

impl<T: Scalar> WtConv<T> {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Self {
        Self {
            channels,
            band_conv: DepthwiseConv2d::new(init, &format!("{name}.band_conv"), 4 * channels, 3, 1, 1, false),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (_, c, h, w) = x.value().dims4("wtconv")?;
        if c != self.channels {
            return Err(shape_err("wtconv", format!("input has {c} channels, expected {}", self.channels)));
        }
        let padded = x.reflect_pad2d(h % 2, w % 2)?;
        let bands = self.band_conv.forward(g, padded.haar_dwt()?)?;
        let mut y = bands.haar_idwt()?;
        if h % 2 == 1 {
            y = y.narrow(2, 0, h)?;
        }
        if w % 2 == 1 {
            y = y.narrow(3, 0, w)?;
        }
        x.add(y)
    }
}

module_fields!(WtConv { band_conv });

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
    fn zero_filters_pass_input_through() {
        let mut m = WtConv::<f64>::new(&mut Init::new(0), "wt", 3);
        m.visit_mut(&mut |p| p.value.data_mut().fill(0.0));
        let g = Graph::no_grad();
        let x = seq(&[2, 3, 6, 6], 0.4);
        assert_eq!(m.forward(&g, g.constant(x.clone())).unwrap().to_tensor(), x);
    }

    #[test]
    fn preserves_shape_for_even_and_odd_maps() {
        let m = WtConv::<f32>::new(&mut Init::new(0), "wt", 2);
        let g = Graph::no_grad();
        for s in [56, 7] {
            let y = m.forward(&g, g.constant(Tensor::zeros(&[1, 2, s, s]))).unwrap();
            assert_eq!(y.shape(), vec![1, 2, s, s]);
        }
    }

    #[test]
    fn gradients_even_and_odd() {
        let mut init = Init::new(5);
        let mut m = WtConv::<f64>::new(&mut init, "wt", 2);
        m.visit_mut(&mut |p| p.value = init.trunc_normal(p.value.shape(), 0.5));
        for s in [4, 5] {
            let err = check_module(&mut m, &[seq(&[2, 2, s, s], 0.7)], 1e-5, |m, g, v| m.forward(g, v[0])).unwrap();
            assert!(err < 1e-4, "{s}: {err}");
        }
    }

    #[test]
    fn two_pixel_shifts_commute_in_the_interior() {
        let mut init = Init::new(9);
        let mut m = WtConv::<f64>::new(&mut init, "wt", 1);
        m.visit_mut(&mut |p| p.value = init.trunc_normal(p.value.shape(), 0.5));
        let g = Graph::no_grad();
        let (h, w) = (12, 12);
        let x = seq(&[1, 1, h, w], 0.37);
        // Shift right and down by two pixels.
        let mut shifted = Tensor::zeros(&[1, 1, h, w]);
        for i in 2..h {
            for j in 2..w {
                let at = shifted.offset(&[0, 0, i, j]);
                shifted.data_mut()[at] = x.at(&[0, 0, i - 2, j - 2]);
            }
        }
        let y = m.forward(&g, g.constant(x)).unwrap().to_tensor();
        let ys = m.forward(&g, g.constant(shifted)).unwrap().to_tensor();
        // Away from borders (the 3×3 band filter reaches one band pixel = two
        // image pixels), the shifted output is the shifted original output.
        for i in 6..h - 2 {
            for j in 6..w - 2 {
                assert!((ys.at(&[0, 0, i, j]) - y.at(&[0, 0, i - 2, j - 2])).abs() < 1e-12);
            }
        }
    }
}
