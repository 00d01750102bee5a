//! Central-difference gradient checks in `f64`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// At most this many coordinates are perturbed per tensor.
pub const MAX_SAMPLES: usize = 64;

/// Gradients smaller than this are compared absolutely rather than
/// relatively, so round-off on near-zero entries does not dominate.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Fixed random weighting that turns any output into a scalar loss
/// `Σ out ⊙ probe`, so every output coordinate contributes differently.
pub fn probe(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("probe shape")
}

/// Coordinates to perturb in a tensor of `numel` elements.
pub fn sample_coords(numel: usize, seed: u64) -> Vec<usize> {
    if numel <= MAX_SAMPLES {
        return (0..numel).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, numel, MAX_SAMPLES).into_vec();
    idx.sort_unstable();
    idx
}

pub(crate) fn probe_loss<'g>(out: Var<'g, f64>, probe: &Tensor<f64>) -> Result<Var<'g, f64>> {
    let p = out.graph().constant(probe.clone());
    Ok(out.mul(p)?.sum())
}

/// Compares the analytic gradient of `Σ f(inputs) ⊙ probe` with respect to
/// every input against central differences of step `eps`. Returns the
/// largest relative error over the sampled coordinates.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let eval = |values: &[Tensor<f64>], probe: Option<&Tensor<f64>>| -> Result<(Tensor<f64>, f64)> {
        let g = Graph::no_grad();
        let vars: Vec<_> = values.iter().map(|v| g.constant(v.clone())).collect();
        let out = f(&g, &vars)?.to_tensor();
        let loss = probe.map_or(0.0, |p| out.data().iter().zip(p.data()).map(|(a, b)| a * b).sum());
        Ok((out, loss))
    };

    let (out, _) = eval(inputs, None)?;
    let probe = probe(out.shape(), 0x5eed);

    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|v| g.leaf(v.clone(), true)).collect();
    let loss = probe_loss(f(&g, &vars)?, &probe)?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    let mut values = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(*var).unwrap_or(&zero);
        for c in sample_coords(inputs[i].numel(), i as u64) {
            let orig = values[i].data()[c];
            values[i].data_mut()[c] = orig + eps;
            let (_, up) = eval(&values, Some(&probe))?;
            values[i].data_mut()[c] = orig - eps;
            let (_, down) = eval(&values, Some(&probe))?;
            values[i].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic.data()[c], numeric));
        }
    }
    Ok(worst)
}
