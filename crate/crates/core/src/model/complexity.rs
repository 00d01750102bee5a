//! Analytic cost model and a static multiply-accumulate walk.
//!
//! One multiply-accumulate is reported as one FLOP, the convention under
//! which published vision-transformer GFLOP figures are usually quoted.
//! Norms, activations, softmax and elementwise ops are not counted.

use std::collections::BTreeMap;

use super::network::stage_scope;
use super::ModelConfig;
use crate::blocks::{head_groups, AttentionKind};
use crate::error::Result;

/// FLOPs credited per multiply-accumulate.
pub const FLOPS_PER_MAC: u64 = 1;

/// `4nd² + 2n²d`: projections plus score and weighted-sum products of full
/// self-attention over `n` tokens of width `d`.
pub fn complexity_mhsa(n: usize, d: usize) -> f64 {
    let (n, d) = (n as f64, d as f64);
    4.0 * n * d * d + 2.0 * n * n * d
}

/// `8nd²`: the two layers of a ratio-4 feed-forward network.
pub fn complexity_ffn(n: usize, d: usize) -> f64 {
    8.0 * n as f64 * (d * d) as f64
}

/// `4nd² + Σ 2n²dᵢ/Rᵢ²`, where `dᵢ` is the channel share of group `i`
/// (see [`head_groups`]). With `rs = [1]` this equals [`complexity_mhsa`].
pub fn complexity_lmssa(n: usize, d: usize, rs: &[usize]) -> Result<f64> {
    let shares = head_groups(d, rs)?;
    let nf = n as f64;
    let mut total = 4.0 * nf * (d * d) as f64;
    for (&r, &di) in rs.iter().zip(&shares) {
        total += 2.0 * nf * nf * di as f64 / (r * r) as f64;
    }
    Ok(total)
}

/// Analytic and counted attention cost of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCost {
    pub name: String,
    /// Tokens.
    pub n: usize,
    /// Block width.
    pub d: usize,
    /// Width of the attention path.
    pub attn_d: usize,
    pub rs: Vec<usize>,
    pub mhsa: f64,
    pub ffn: f64,
    pub lmssa: f64,
    /// MACs the attention path actually performs, reduction layers included.
    pub attention_macs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub resolution: usize,
    pub layers: Vec<LayerCost>,
    /// MACs per scope path, keyed exactly as the runtime counter keys them.
    pub by_scope: BTreeMap<String, u64>,
    pub params: usize,
}

impl ComplexityReport {
    pub fn total_macs(&self) -> u64 {
        self.by_scope.values().sum()
    }

    pub fn flops(&self) -> u64 {
        self.total_macs() * FLOPS_PER_MAC
    }

    pub fn gflops(&self) -> f64 {
        self.flops() as f64 / 1e9
    }

    /// MACs summed over scopes whose path contains `segment`.
    pub fn scope_total(&self, segment: &str) -> u64 {
        self.by_scope
            .iter()
            .filter(|(k, _)| k.split('/').any(|s| s == segment))
            .map(|(_, v)| *v)
            .sum()
    }

    pub fn attention_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.attention_macs).sum()
    }

    pub fn lmssa_total(&self) -> f64 {
        self.layers.iter().map(|l| l.lmssa).sum()
    }

    pub fn mhsa_total(&self) -> f64 {
        self.layers.iter().map(|l| l.mhsa).sum()
    }

    pub fn ffn_total(&self) -> f64 {
        self.layers.iter().map(|l| l.ffn).sum()
    }

    /// Counted attention cost relative to the analytic value, minus one.
    pub fn attention_gap(&self) -> f64 {
        self.attention_macs() as f64 / self.lmssa_total() - 1.0
    }
}

/// Walks the architecture described by `cfg` and counts every
/// multiply-accumulate the forward pass of one image performs.
pub fn estimate_flops(cfg: &ModelConfig) -> Result<ComplexityReport> {
    cfg.validate()?;
    let mut by_scope = BTreeMap::new();
    let mut add = |key: String, macs: usize| *by_scope.entry(key).or_insert(0u64) += macs as u64;

    // 3×3, stride 2, padding 1.
    let s0 = (cfg.resolution - 1) / 2 + 1;
    let w = cfg.stem_width;
    add("stem".into(), s0 * s0 * 9 * (cfg.in_channels * w + 2 * w * w));

    let sizes = cfg.stage_resolutions()?;
    let mut layers = Vec::new();
    let mut cin = w;
    for (i, (st, &s)) in cfg.stages.iter().zip(&sizes).enumerate() {
        let scope = stage_scope(i);
        let (c, n) = (st.dim, s * s);
        add(format!("{scope}/patch_embed"), n * cin * c * st.patch * st.patch);
        let conv = st.conv_channels(cfg.cff);
        let a = c - conv;
        let shares = head_groups(a, &st.rs)?;
        for j in 0..st.depth {
            if cfg.lfe {
                add(format!("{scope}/lfe"), 10 * c * n);
            }
            if conv > 0 {
                let half = s.div_ceil(2);
                add(format!("{scope}/cff_conv"), 4 * conv * half * half * 9 + n * conv * conv * st.kernel * st.kernel);
            }
            let mut attn = 4 * n * a * a;
            for (&r, &ci) in st.rs.iter().zip(&shares) {
                let m = s.div_ceil(r).pow(2);
                if r > 1 {
                    attn += 2 * match cfg.attention {
                        AttentionKind::Lightweight => ci * m * r * r,
                        AttentionKind::Normal => m * ci * a * r * r + m * ci * ci,
                    };
                }
                attn += 2 * n * m * ci;
            }
            add(format!("{scope}/attention"), attn);
            add(format!("{scope}/ffn"), 2 * n * c * c * cfg.ffn_ratio);
            layers.push(LayerCost {
                name: format!("{scope}.block{j}"),
                n,
                d: c,
                attn_d: a,
                rs: st.rs.clone(),
                mhsa: complexity_mhsa(n, a),
                ffn: complexity_ffn(n, c),
                lmssa: complexity_lmssa(n, a, &st.rs)?,
                attention_macs: attn as u64,
            });
        }
        cin = c;
    }
    add("head".into(), cin * cfg.num_classes);
    Ok(ComplexityReport { resolution: cfg.resolution, layers, by_scope, params: count_params_for(cfg)? })
}

/// Parameter count of the model `cfg` describes, without building it.
pub fn count_params_for(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let w = cfg.stem_width;
    let mut total = 9 * cfg.in_channels * w + 2 * 9 * w * w + 3 * 2 * w;
    let sizes = cfg.stage_resolutions()?;
    let mut cin = w;
    for (st, &s) in cfg.stages.iter().zip(&sizes) {
        let c = st.dim;
        total += cin * c * st.patch * st.patch + c + 2 * c;
        if cfg.use_pe {
            total += c * s * s;
        }
        let conv = st.conv_channels(cfg.cff);
        let a = c - conv;
        let mut block = 2 * 2 * c + 2 * c * cfg.ffn_ratio * c + cfg.ffn_ratio * c + c;
        if cfg.lfe {
            block += 10 * c + 2 * c + 2 * c;
        }
        if conv > 0 {
            block += 36 * conv + conv * conv * st.kernel * st.kernel + conv + 2 * conv;
        }
        block += 4 * (a * a + a);
        for (&r, &ci) in st.rs.iter().zip(&head_groups(a, &st.rs)?) {
            if r > 1 {
                block += 2 * match cfg.attention {
                    AttentionKind::Lightweight => ci * r * r + ci,
                    AttentionKind::Normal => ci * a * r * r + ci + ci * ci + ci,
                };
            }
        }
        total += st.depth * block;
        cin = c;
    }
    Ok(total + 2 * cin + cin * cfg.num_classes + cfg.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Variant};
    use crate::nn::Mode;
    use crate::tensor::{cost, Graph, Tensor};
    use proptest::prelude::*;

    #[test]
    fn hand_evaluated_formulas() {
        assert_eq!(complexity_mhsa(4, 2), 128.0);
        assert_eq!(complexity_ffn(2, 3), 144.0);
        assert_eq!(complexity_ffn(0, 7), 0.0);
        assert_eq!(complexity_lmssa(49, 512, &[1]).unwrap(), 53_838_848.0);
        assert!(complexity_lmssa(4, 8, &[]).is_err());
        assert!(complexity_lmssa(3136, 64, &[8, 4]).unwrap() < complexity_mhsa(3136, 64));
    }

    proptest! {
        #[test]
        fn lmssa_degenerates_to_mhsa(n in 1usize..=1024, d in 1usize..=1024) {
            prop_assert_eq!(complexity_lmssa(n, d, &[1]).unwrap(), complexity_mhsa(n, d));
        }

        #[test]
        fn mhsa_is_monotone(n in 1usize..512, d in 1usize..512) {
            prop_assert!(complexity_mhsa(n + 1, d) >= complexity_mhsa(n, d));
            prop_assert!(complexity_mhsa(n, d + 1) >= complexity_mhsa(n, d));
        }

        #[test]
        fn reduction_strictly_cheaper(n in 1usize..512, d in 2usize..512, r in 2usize..9) {
            prop_assert!(complexity_lmssa(n, d, &[r, 1]).unwrap() < complexity_mhsa(n, d));
        }
    }

    #[test]
    fn static_count_matches_built_model() {
        for v in [Variant::T, Variant::Xs, Variant::S] {
            for kind in [AttentionKind::Lightweight, AttentionKind::Normal] {
                let mut cfg = ModelConfig::variant(v);
                cfg.attention = kind;
                cfg.use_pe = kind == AttentionKind::Normal;
                let built = build_model::<f32>(&cfg, 0).unwrap().count_params();
                assert_eq!(count_params_for(&cfg).unwrap(), built, "{v} {kind:?}");
            }
        }
        let mut cfg = ModelConfig::variant(Variant::T).with_resolution(32).unwrap();
        cfg.lfe = false;
        cfg.cff = false;
        assert_eq!(count_params_for(&cfg).unwrap(), build_model::<f32>(&cfg, 0).unwrap().count_params());
    }

    #[test]
    fn static_walk_matches_runtime_counter() {
        for normal in [false, true] {
            let mut cfg = ModelConfig::variant(Variant::T).with_resolution(32).unwrap();
            if normal {
                cfg.attention = AttentionKind::Normal;
            }
            let model = build_model::<f32>(&cfg, 0).unwrap();
            let g = Graph::no_grad();
            let (out, tally) = cost::measure(|| model.forward(&g, g.constant(Tensor::zeros(&[1, 3, 32, 32])), Mode::Eval));
            out.unwrap();
            let report = estimate_flops(&cfg).unwrap();
            assert_eq!(tally.by_scope, report.by_scope);
        }
    }

    #[test]
    fn totals_are_sums_of_parts() {
        let r = estimate_flops(&ModelConfig::variant(Variant::S)).unwrap();
        let parts: u64 = ["stem", "patch_embed", "lfe", "cff_conv", "attention", "ffn", "head"]
            .iter()
            .map(|s| r.scope_total(s))
            .sum();
        assert_eq!(parts, r.total_macs());
        assert_eq!(r.attention_macs(), r.scope_total("attention"));
        assert_eq!(r.layers.len(), 10);
        assert_eq!(r, estimate_flops(&ModelConfig::variant(Variant::S)).unwrap());
    }

    #[test]
    fn reduced_stages_beat_full_attention() {
        let r = estimate_flops(&ModelConfig::variant(Variant::T)).unwrap();
        for l in &r.layers {
            if l.rs.iter().any(|&x| x > 1) {
                assert!(l.lmssa < l.mhsa, "{}", l.name);
            } else {
                assert_eq!(l.lmssa, l.mhsa);
            }
        }
    }
}
