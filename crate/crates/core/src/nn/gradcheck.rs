use super::Module;
use crate::error::Result;
use crate::tensor::gradcheck::{probe, probe_loss, rel_err, sample_coords};
use crate::tensor::{Graph, Tensor, Var};

/// Finite-difference check of a module's forward pass with respect to both
/// its inputs and every parameter it owns. Returns the worst relative error.
///
/// `forward` must be deterministic, so batch-norm layers should run in
/// eval mode.
pub fn check_module<M, F>(module: &mut M, inputs: &[Tensor<f64>], eps: f64, forward: F) -> Result<f64>
where
    M: Module<f64>,
    F: for<'g> Fn(&M, &'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let eval = |m: &M, values: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let g = Graph::no_grad();
        let vars: Vec<_> = values.iter().map(|v| g.constant(v.clone())).collect();
        Ok(forward(m, &g, &vars)?.to_tensor())
    };
    let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 { a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum() };

    let probe = probe(eval(module, inputs)?.shape(), 0x5eed);
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|v| g.leaf(v.clone(), true)).collect();
    let loss = probe_loss(forward(module, &g, &vars)?, &probe)?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    let mut values = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(*var).unwrap_or(&zero).clone();
        for c in sample_coords(inputs[i].numel(), i as u64) {
            let orig = values[i].data()[c];
            values[i].data_mut()[c] = orig + eps;
            let up = dot(&eval(module, &values)?, &probe);
            values[i].data_mut()[c] = orig - eps;
            let down = dot(&eval(module, &values)?, &probe);
            values[i].data_mut()[c] = orig;
            worst = worst.max(rel_err(analytic.data()[c], (up - down) / (2.0 * eps)));
        }
    }

    let mut ids = Vec::new();
    module.visit(&mut |p| ids.push((p.id(), p.numel())));
    for (k, (id, numel)) in ids.into_iter().enumerate() {
        let zero = Tensor::zeros(&[numel]);
        let analytic = grads.by_id(id).unwrap_or(&zero).clone();
        for c in sample_coords(numel, 1000 + k as u64) {
            let mut orig = 0.0;
            module.visit(&mut |p| {
                if p.id() == id {
                    orig = p.value.data()[c];
                }
            });
            let set = |v: f64, m: &mut M| {
                m.visit_mut(&mut |p| {
                    if p.id() == id {
                        p.value.data_mut()[c] = v;
                    }
                })
            };
            set(orig + eps, module);
            let up = dot(&eval(module, inputs)?, &probe);
            set(orig - eps, module);
            let down = dot(&eval(module, inputs)?, &probe);
            set(orig, module);
            worst = worst.max(rel_err(analytic.data()[c], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
