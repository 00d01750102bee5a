use crate::error::{arg_err, shape_err, Result};
use crate::nn::{module_fields, Conv2d, DepthwiseConv2d, Init, Linear, Module};
use crate::tensor::{cost, BnStats, Graph, Param, Scalar, Var};

/// How keys and values of a head group are spatially reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionKind {
    /// One strided depthwise filter per group channel.
    #[default]
    Lightweight,
    /// A dense strided convolution from all attention channels to the group's
    /// channels followed by a 1×1 channel-restoration layer.
    Normal,
}

/// Per-group channel slices: equal shares, with the remainder going to the
/// `R = 1` group (or the last group when none has `R = 1`).
pub fn head_groups(channels: usize, rs: &[usize]) -> Result<Vec<usize>> {
    if rs.is_empty() || rs.contains(&0) {
        return Err(arg_err("head_groups", format!("reduction factors {rs:?} must be non-empty and positive")));
    }
    let base = channels / rs.len();
    if base == 0 {
        return Err(arg_err(
            "head_groups",
            format!("{channels} channels cannot feed {} head groups", rs.len()),
        ));
    }
    let mut slices = vec![base; rs.len()];
    let idx = rs.iter().position(|&r| r == 1).unwrap_or(rs.len() - 1);
    slices[idx] += channels - base * rs.len();
    Ok(slices)
}

/// Token reduction by factor `r` on each spatial axis. `r = 1` is the
/// identity; otherwise the map is zero-padded up to a multiple of `r` and
/// passed through `filter` (kernel = stride = `r`).
pub fn spatial_reduce<'g, T: Scalar>(
    g: &'g Graph<T>,
    x: Var<'g, T>,
    r: usize,
    filter: &DepthwiseConv2d<T>,
) -> Result<Var<'g, T>> {
    let (_, _, h, w) = x.value().dims4("spatial_reduce")?;
    if r == 0 || h < r || w < r {
        return Err(arg_err("spatial_reduce", format!("factor {r} on a {h}x{w} map")));
    }
    if r == 1 {
        return Ok(x);
    }
    let padded = x.zero_pad2d(h.next_multiple_of(r) - h, w.next_multiple_of(r) - w)?;
    filter.forward(g, padded)
}

/// Scaled dot-product attention for one head from token-major matrices:
/// `softmax(q kᵀ / √d_k) v` with `q: [n, d_k]`, `k: [m, d_k]`, `v: [m, d_v]`.
pub fn attention_head<'g, T: Scalar>(q: Var<'g, T>, k: Var<'g, T>, v: Var<'g, T>, d_k: usize) -> Result<Var<'g, T>> {
    let scores = q.matmul(k.transpose2d()?)?.scale(1.0 / (d_k as f64).sqrt());
    scores.softmax(1)?.matmul(v)
}

/// Key/value reduction layers of one head group.
#[derive(Clone, Debug)]
pub enum Reducer<T: Scalar> {
    Identity,
    Depthwise(DepthwiseConv2d<T>),
    Dense { conv: Conv2d<T>, restore: Linear<T> },
}

impl<T: Scalar> Reducer<T> {
    fn forward<'g>(
        &self,
        g: &'g Graph<T>,
        full: Var<'g, T>,
        slice: Var<'g, T>,
        r: usize,
    ) -> Result<Var<'g, T>> {
        match self {
            Reducer::Identity => Ok(slice),
            Reducer::Depthwise(f) => spatial_reduce(g, slice, r, f),
            Reducer::Dense { conv, restore } => {
                let (_, _, h, w) = full.value().dims4("spatial_reduce")?;
                if h < r || w < r {
                    return Err(arg_err("spatial_reduce", format!("factor {r} on a {h}x{w} map")));
                }
                let padded = full.zero_pad2d(h.next_multiple_of(r) - h, w.next_multiple_of(r) - w)?;
                restore.forward(g, conv.forward(g, padded)?)
            }
        }
    }
}

impl<T: Scalar> Module<T> for Reducer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            Reducer::Identity => {}
            Reducer::Depthwise(d) => d.visit(f),
            Reducer::Dense { conv, restore } => {
                conv.visit(f);
                restore.visit(f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            Reducer::Identity => {}
            Reducer::Depthwise(d) => d.visit_mut(f),
            Reducer::Dense { conv, restore } => {
                conv.visit_mut(f);
                restore.visit_mut(f);
            }
        }
    }

    fn visit_buffers(&self, _f: &mut dyn FnMut(&str, &BnStats<T>)) {}
}

/// Heads that share one reduction factor and one channel slice.
#[derive(Clone, Debug)]
pub struct HeadGroup<T: Scalar> {
    pub r: usize,
    pub offset: usize,
    pub channels: usize,
    pub heads: usize,
    pub reduce_k: Reducer<T>,
    pub reduce_v: Reducer<T>,
}

impl<T: Scalar> HeadGroup<T> {
    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

module_fields!(HeadGroup { reduce_k, reduce_v });

/// Multi-scale self-attention. Q, K and V are full-resolution projections;
/// each head group attends from its query slice to its key/value slice
/// reduced by the group's factor. Head outputs are concatenated and
/// projected.
#[derive(Clone, Debug)]
pub struct Lmssa<T: Scalar> {
    pub dim: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub groups: Vec<HeadGroup<T>>,
    pub proj: Linear<T>,
}

impl<T: Scalar> Lmssa<T> {
    /// `head_dim` heads per group when the group width divides evenly,
    /// otherwise a single head spanning the group.
    pub fn new(
        init: &mut Init,
        name: &str,
        dim: usize,
        rs: &[usize],
        head_dim: usize,
        kind: AttentionKind,
    ) -> Result<Self> {
        let q = Linear::new(init, &format!("{name}.q"), dim, dim, true);
        let k = Linear::new(init, &format!("{name}.k"), dim, dim, true);
        let v = Linear::new(init, &format!("{name}.v"), dim, dim, true);
        let mut groups = Vec::with_capacity(rs.len());
        let mut offset = 0;
        for (i, (&r, channels)) in rs.iter().zip(head_groups(dim, rs)?).enumerate() {
            let heads = if head_dim > 0 && channels % head_dim == 0 { channels / head_dim } else { 1 };
            let mut reducer = |which: &str| match (r, kind) {
                (1, _) => Reducer::Identity,
                (_, AttentionKind::Lightweight) => Reducer::Depthwise(DepthwiseConv2d::new(
                    init,
                    &format!("{name}.groups.{i}.reduce_{which}"),
                    channels,
                    r,
                    r,
                    0,
                    true,
                )),
                (_, AttentionKind::Normal) => Reducer::Dense {
                    conv: Conv2d::new(init, &format!("{name}.groups.{i}.reduce_{which}"), dim, channels, r, r, 0, true),
                    restore: Linear::new(init, &format!("{name}.groups.{i}.restore_{which}"), channels, channels, true),
                },
            };
            let reduce_k = reducer("k");
            let reduce_v = reducer("v");
            groups.push(HeadGroup { r, offset, channels, heads, reduce_k, reduce_v });
            offset += channels;
        }
        let proj = Linear::new(init, &format!("{name}.proj"), dim, dim, true);
        Ok(Self { dim, q, k, v, groups, proj })
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        cost::scope("attention", || {
            let (b, c, h, w) = x.value().dims4("lmssa")?;
            if c != self.dim {
                return Err(shape_err("lmssa", format!("input has {c} channels, expected {}", self.dim)));
            }
            let n = h * w;
            let (q, k, v) = (self.q.forward(g, x)?, self.k.forward(g, x)?, self.v.forward(g, x)?);
            let mut outs = Vec::with_capacity(self.groups.len());
            for grp in &self.groups {
                let slice = |t: Var<'g, T>| t.narrow(1, grp.offset, grp.channels);
                let ki = grp.reduce_k.forward(g, k, slice(k)?, grp.r)?;
                let vi = grp.reduce_v.forward(g, v, slice(v)?, grp.r)?;
                let (_, _, hr, wr) = ki.value().dims4("lmssa")?;
                let m = hr * wr;
                let o = slice(q)?.reshape(&[b, grp.channels, n])?.multi_head_attention(
                    ki.reshape(&[b, grp.channels, m])?,
                    vi.reshape(&[b, grp.channels, m])?,
                    grp.heads,
                    1.0 / (grp.head_dim() as f64).sqrt(),
                )?;
                outs.push(o);
            }
            let merged = Var::concat(&outs, 1)?.reshape(&[b, c, h, w])?;
            self.proj.forward(g, merged)
        })
    }
}

module_fields!(Lmssa { q, k, v, groups, proj });
