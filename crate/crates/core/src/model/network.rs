use std::collections::BTreeMap;

use super::ModelConfig;
use crate::blocks::{BlockSpec, ClassifierHead, ConvStem, MscBlock, PatchEmbed};
use crate::error::{arg_err, Result};
use crate::nn::{module_fields, Init, LayerNorm, Mode, Module};
use crate::tensor::{cost, Graph, Param, Scalar, Tensor, Var};

const STAGE_SCOPES: [&str; 8] = ["stage1", "stage2", "stage3", "stage4", "stage5", "stage6", "stage7", "stage8"];

pub(crate) fn stage_scope(i: usize) -> &'static str {
    STAGE_SCOPES.get(i).copied().unwrap_or("stage")
}

/// Patch embedding, optional learned position table, then the blocks.
#[derive(Clone, Debug)]
pub struct Stage<T: Scalar> {
    pub embed: PatchEmbed<T>,
    pub pos: Option<Param<T>>,
    pub blocks: Vec<MscBlock<T>>,
}

module_fields!(Stage { embed, pos, blocks });

/// The assembled classifier: stem, stages, final norm and head.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub stem: ConvStem<T>,
    pub stages: Vec<Stage<T>>,
    pub norm: LayerNorm<T>,
    pub head: ClassifierHead<T>,
}

module_fields!(Model { stem, stages, norm, head });

/// Builds a model with weights drawn deterministically from `seed`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut init = Init::new(seed);
    let stem = ConvStem::new(&mut init, "stem", cfg.in_channels, cfg.stem_width);
    let sizes = cfg.stage_resolutions()?;
    let mut stages = Vec::with_capacity(cfg.stages.len());
    let mut cin = cfg.stem_width;
    for (i, (sc, &size)) in cfg.stages.iter().zip(&sizes).enumerate() {
        let name = format!("stage{}", i + 1);
        let embed = PatchEmbed::new(&mut init, &format!("{name}.embed"), cin, sc.dim, sc.patch);
        let pos = cfg.use_pe.then(|| {
            let table = init.trunc_normal(&[1, sc.dim, size, size], crate::nn::WEIGHT_STD);
            Param::new(format!("{name}.pos"), table).no_decay()
        });
        let spec = BlockSpec {
            channels: sc.dim,
            rs: sc.rs.clone(),
            conv_channels: sc.conv_channels(cfg.cff),
            kernel: sc.kernel,
            padding: sc.padding,
            ffn_ratio: cfg.ffn_ratio,
            head_dim: cfg.head_dim,
            attention: cfg.attention,
            lfe: cfg.lfe,
        };
        let blocks = (0..sc.depth)
            .map(|j| MscBlock::new(&mut init, &format!("{name}.block{j}"), &spec))
            .collect::<Result<_>>()?;
        stages.push(Stage { embed, pos, blocks });
        cin = sc.dim;
    }
    let norm = LayerNorm::new(&mut init, "norm", cin);
    let head = ClassifierHead::new(&mut init, "head", cin, cfg.num_classes);
    Ok(Model { config: cfg.clone(), stem, stages, norm, head })
}

impl<T: Scalar> Model<T> {
    /// `x: [B, in_channels, res, res]` → logits `[B, num_classes]`.
    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>, mode: Mode) -> Result<Var<'g, T>> {
        let shape = x.shape();
        let res = self.config.resolution;
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(arg_err(
                "model",
                format!("expected [B, {}, {res}, {res}] input, got {shape:?}", self.config.in_channels),
            ));
        }
        if shape[2] != res || shape[3] != res {
            return Err(arg_err(
                "model",
                format!("unsupported resolution {}x{} for a model built at {res}x{res}", shape[2], shape[3]),
            ));
        }
        let mut x = self.stem.forward(g, x, mode)?;
        for (i, stage) in self.stages.iter().enumerate() {
            x = cost::scope(stage_scope(i), || -> Result<_> {
                let mut x = stage.embed.forward(g, x)?;
                if let Some(pos) = &stage.pos {
                    x = x.add_broadcast0(g.param(pos))?;
                }
                for block in &stage.blocks {
                    x = block.forward(g, x, mode)?;
                }
                Ok(x)
            })?;
        }
        self.head.forward(g, self.norm.forward(g, x)?)
    }

    /// Eval-mode logits without recording a tape.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::no_grad();
        Ok(self.forward(&g, g.constant(x.clone()), Mode::Eval)?.to_tensor())
    }

    pub fn count_params(&self) -> usize {
        self.num_params()
    }

    /// Parameter counts grouped by stage and block component, e.g.
    /// `stage2.cff.attn` or `stage1.embed`, summed over the stage's blocks.
    pub fn param_breakdown(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        self.visit(&mut |p| {
            *out.entry(breakdown_key(&p.name)).or_default() += p.numel();
        });
        out
    }

    pub fn stage_dims(&self) -> Vec<usize> {
        self.config.dims()
    }

    pub fn depths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.blocks.len()).collect()
    }
}

fn breakdown_key(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        [stage, block, "cff", sub, ..] if block.starts_with("block") => format!("{stage}.cff.{sub}"),
        [stage, block, comp, ..] if block.starts_with("block") => format!("{stage}.{comp}"),
        [stage, "embed", ..] => format!("{stage}.embed"),
        [stage, "pos"] => format!("{stage}.pos"),
        [top, ..] => top.to_string(),
        [] => String::new(),
    }
}
