//! Finite-difference checks of every differentiable primitive and every
//! composite block, in `f64`.

use crate::blocks::{AttentionKind, BlockSpec, ClassifierHead, ConvStem, Ffn, Lfe, Lmssa, MscBlock, PatchEmbed};
use crate::error::Result;
use crate::nn::{check_module, Init, Mode, Module};
use crate::tensor::gradcheck::finite_diff_check;
use crate::tensor::{BnStats, Tensor, Var};
use crate::wavelet::WtConv;

/// Worst relative error a check may report.
pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOL
    }
}

fn rand(init: &mut Init, shape: &[usize]) -> Tensor<f64> {
    init.trunc_normal(shape, 1.0)
}

fn randomize(m: &mut impl Module<f64>, seed: u64) {
    let mut init = Init::new(seed);
    m.visit_mut(&mut |p| p.value = init.trunc_normal(p.value.shape(), 0.4));
}

/// One check per primitive op.
pub fn op_suite() -> Result<Vec<GradCheck>> {
    let mut init = Init::new(0x0b5);
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor<f64>>, f: &dyn for<'g> Fn(&[Var<'g, f64>]) -> Result<Var<'g, f64>>| {
        let err = finite_diff_check(|_, v| f(v), &inputs, GRAD_EPS)?;
        out.push(GradCheck { name: name.to_string(), max_rel_err: err });
        Ok::<_, crate::Error>(())
    };
    let a = rand(&mut init, &[2, 3, 4]);
    let b = rand(&mut init, &[2, 3, 4]);
    let img = rand(&mut init, &[2, 3, 6, 6]);
    run("add", vec![a.clone(), b.clone()], &|v| v[0].add(v[1]))?;
    run("sub", vec![a.clone(), b.clone()], &|v| v[0].sub(v[1]))?;
    run("mul", vec![a.clone(), b.clone()], &|v| v[0].mul(v[1]))?;
    run("add_broadcast0", vec![a.clone(), rand(&mut init, &[1, 3, 4])], &|v| v[0].add_broadcast0(v[1]))?;
    run("scale", vec![a.clone()], &|v| Ok(v[0].scale(-1.7)))?;
    run("sum", vec![a.clone()], &|v| Ok(v[0].sum()))?;
    run("mean", vec![a.clone()], &|v| Ok(v[0].mean()))?;
    run("gelu", vec![a.clone()], &|v| Ok(v[0].gelu()))?;
    run("reshape", vec![a.clone()], &|v| v[0].reshape(&[4, 6])?.mul(v[0].reshape(&[4, 6])?))?;
    run("transpose2d", vec![rand(&mut init, &[3, 5])], &|v| v[0].transpose2d()?.mul(v[0].transpose2d()?))?;
    run("narrow", vec![a.clone()], &|v| v[0].narrow(1, 1, 2))?;
    run("concat", vec![a.clone(), rand(&mut init, &[2, 2, 4])], &|v| Var::concat(&[v[0], v[1]], 1))?;
    run("matmul", vec![rand(&mut init, &[3, 4]), rand(&mut init, &[4, 5])], &|v| v[0].matmul(v[1]))?;
    run(
        "channel_linear",
        vec![img.clone(), rand(&mut init, &[5, 3]), rand(&mut init, &[5])],
        &|v| v[0].channel_linear(v[1], Some(v[2])),
    )?;
    run(
        "conv2d",
        vec![img.clone(), rand(&mut init, &[4, 3, 3, 3]), rand(&mut init, &[4])],
        &|v| v[0].conv2d(v[1], Some(v[2]), 2, 1),
    )?;
    run("conv2d_pointwise", vec![img.clone(), rand(&mut init, &[2, 3, 1, 1])], &|v| v[0].conv2d(v[1], None, 1, 0))?;
    run(
        "depthwise_conv2d",
        vec![img.clone(), rand(&mut init, &[3, 1, 3, 3]), rand(&mut init, &[3])],
        &|v| v[0].depthwise_conv2d(v[1], Some(v[2]), 1, 1),
    )?;
    run(
        "depthwise_conv2d_strided",
        vec![img.clone(), rand(&mut init, &[3, 1, 2, 2])],
        &|v| v[0].depthwise_conv2d(v[1], None, 2, 0),
    )?;
    run("zero_pad2d", vec![img.clone()], &|v| v[0].zero_pad2d(1, 2))?;
    run("reflect_pad2d", vec![rand(&mut init, &[1, 2, 5, 3])], &|v| v[0].reflect_pad2d(3, 1))?;
    run("global_avg_pool", vec![img.clone()], &|v| v[0].global_avg_pool())?;
    run(
        "layer_norm",
        vec![img.clone(), rand(&mut init, &[3]), rand(&mut init, &[3])],
        &|v| v[0].layer_norm(v[1], v[2]),
    )?;
    let stats = BnStats::new(3);
    run(
        "batch_norm2d",
        vec![img.clone(), rand(&mut init, &[3]), rand(&mut init, &[3])],
        &|v| v[0].batch_norm2d(v[1], v[2], &stats, true),
    )?;
    run("softmax", vec![a.clone()], &|v| v[0].softmax(2))?;
    run(
        "multi_head_attention",
        vec![rand(&mut init, &[2, 4, 5]), rand(&mut init, &[2, 4, 3]), rand(&mut init, &[2, 6, 3])],
        &|v| v[0].multi_head_attention(v[1], v[2], 2, 0.7),
    )?;
    run("cross_entropy", vec![rand(&mut init, &[4, 5])], &|v| v[0].cross_entropy(&[0, 3, 4, 1], 0.1))?;
    run("haar_dwt", vec![img.clone()], &|v| v[0].haar_dwt())?;
    run("haar_idwt", vec![rand(&mut init, &[2, 8, 3, 3])], &|v| v[0].haar_idwt())?;
    Ok(out)
}

/// One check per composite block on `side × side` maps, parameters
/// included. Batch norms run in eval mode.
pub fn block_suite(side: usize) -> Result<Vec<GradCheck>> {
    let mut data = Init::new(0xb10c);
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| out.push(GradCheck { name: name.to_string(), max_rel_err: err });
    let mut init = Init::new(1);

    let mut lfe = Lfe::<f64>::new(&mut init, "lfe", 3);
    randomize(&mut lfe, 2);
    let x = rand(&mut data, &[2, 3, side, side]);
    push("lfe", check_module(&mut lfe, &[x], GRAD_EPS, |m, g, v| m.forward(g, v[0], Mode::Eval))?);

    for (name, kind) in [("lmssa", AttentionKind::Lightweight), ("lmssa_normal", AttentionKind::Normal)] {
        let mut m = Lmssa::<f64>::new(&mut init, name, 4, &[4, 2, 1], 2, kind)?;
        randomize(&mut m, 3);
        let x = rand(&mut data, &[1, 4, side, side]);
        push(name, check_module(&mut m, &[x], GRAD_EPS, |m, g, v| m.forward(g, v[0]))?);
    }

    let mut wt = WtConv::<f64>::new(&mut init, "wt", 2);
    randomize(&mut wt, 4);
    let x = rand(&mut data, &[1, 2, side, side]);
    push("wtconv", check_module(&mut wt, &[x], GRAD_EPS, |m, g, v| m.forward(g, v[0]))?);

    let attn = Lmssa::new(&mut init, "cff.attn", 4, &[2, 1], 2, AttentionKind::Lightweight)?;
    let mut cff = crate::blocks::Cff::<f64>::new(&mut init, "cff", 6, 2, 3, 1, attn)?;
    randomize(&mut cff, 5);
    let x = rand(&mut data, &[1, 6, side, side]);
    push("cff", check_module(&mut cff, &[x], GRAD_EPS, |m, g, v| m.forward(g, v[0]))?);

    let mut ffn = Ffn::<f64>::new(&mut init, "ffn", 3, 2);
    randomize(&mut ffn, 6);
    let x = rand(&mut data, &[1, 3, side, side]);
    push("ffn", check_module(&mut ffn, &[x], GRAD_EPS, |m, g, v| m.forward(g, v[0]))?);

    let spec = BlockSpec {
        channels: 6,
        rs: vec![2, 1],
        conv_channels: 2,
        kernel: 3,
        padding: 1,
        ffn_ratio: 2,
        head_dim: 2,
        attention: AttentionKind::Lightweight,
        lfe: true,
    };
    let mut block = MscBlock::<f64>::new(&mut init, "block", &spec)?;
    randomize(&mut block, 7);
    let x = rand(&mut data, &[1, 6, side, side]);
    push("msc_block", check_module(&mut block, &[x], GRAD_EPS, |m, g, v| m.forward(g, v[0], Mode::Eval))?);

    let mut stem = ConvStem::<f64>::new(&mut init, "stem", 3, 2);
    randomize(&mut stem, 8);
    let x = rand(&mut data, &[1, 3, side, side]);
    push("conv_stem", check_module(&mut stem, &[x], GRAD_EPS, |m, g, v| m.forward(g, v[0], Mode::Eval))?);

    let mut pe = PatchEmbed::<f64>::new(&mut init, "embed", 3, 4, 2);
    randomize(&mut pe, 9);
    let x = rand(&mut data, &[1, 3, side, side]);
    push("patch_embed", check_module(&mut pe, &[x], GRAD_EPS, |m, g, v| m.forward(g, v[0]))?);

    let mut head = ClassifierHead::<f64>::new(&mut init, "head", 3, 5);
    randomize(&mut head, 10);
    let x = rand(&mut data, &[2, 3, side, side]);
    push("classifier_head", check_module(&mut head, &[x], GRAD_EPS, |m, g, v| m.forward(g, v[0]))?);
    Ok(out)
}

/// [`op_suite`] followed by [`block_suite`] at 8×8.
pub fn gradient_suite() -> Result<Vec<GradCheck>> {
    let mut all = op_suite()?;
    all.extend(block_suite(8)?);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass() {
        for c in op_suite().unwrap() {
            assert!(c.passed(), "{}: {}", c.name, c.max_rel_err);
        }
    }
}
