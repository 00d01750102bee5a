use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Entry, EntryKind};
use crate::nn::Module;
use crate::tensor::{Gradients, Param, Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW moment buffers keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Scalar> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Default for OptimizerState<T> {
    fn default() -> Self {
        Self { step: 0, beta1: BETA1, beta2: BETA2, eps: ADAM_EPS, moments: BTreeMap::new() }
    }
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// One decoupled-weight-decay Adam step over every parameter of
    /// `params` that has a gradient. Parameters flagged `no_decay` skip the
    /// decay. Non-finite gradients abort the step before anything changes.
    pub fn step<M: Module<T> + ?Sized>(
        &mut self,
        params: &mut M,
        grad: &dyn Fn(&Param<T>) -> Option<Tensor<T>>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let mut grads = Vec::new();
        let mut err = None;
        params.visit(&mut |p| {
            let g = grad(p);
            if let Some(g) = &g {
                if err.is_none() && (g.shape() != p.value.shape() || !g.all_finite()) {
                    err = Some(if g.shape() != p.value.shape() {
                        Error::Shape {
                            op: "adamw",
                            detail: format!("gradient {:?} for `{}` of shape {:?}", g.shape(), p.name, p.value.shape()),
                        }
                    } else {
                        Error::NonFiniteGradient(p.name.clone())
                    });
                }
            }
            grads.push(g);
        });
        if let Some(e) = err {
            return Err(e);
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let mut grads = grads.into_iter();
        let moments = &mut self.moments;
        params.visit_mut(&mut |p| {
            let Some(g) = grads.next().flatten() else { return };
            let (m, v) = moments
                .entry(p.name.clone())
                .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let decay = if p.no_decay { 1.0 } else { 1.0 - lr * weight_decay };
            let iter = p.value.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &gi), (mi, vi)) in iter {
                let gi = gi.to_f64();
                let mn = b1 * mi.to_f64() + (1.0 - b1) * gi;
                let vn = b2 * vi.to_f64() + (1.0 - b2) * gi * gi;
                *mi = T::from_f64(mn);
                *vi = T::from_f64(vn);
                let upd = (mn / c1) / ((vn / c2).sqrt() + eps);
                *w = T::from_f64(w.to_f64() * decay - lr * upd);
            }
        });
        Ok(())
    }

    /// [`OptimizerState::step`] with gradients from a backward pass.
    pub fn step_with<M: Module<T> + ?Sized>(
        &mut self,
        params: &mut M,
        grads: &Gradients<T>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        self.step(params, &|p| grads.param(p).cloned(), lr, weight_decay)
    }

    pub fn entries(&self) -> Vec<Entry<T>> {
        let mut out = Vec::with_capacity(2 * self.moments.len());
        for (name, (m, v)) in &self.moments {
            out.push(Entry { name: name.clone(), kind: EntryKind::Moment1, tensor: m.clone() });
            out.push(Entry { name: name.clone(), kind: EntryKind::Moment2, tensor: v.clone() });
        }
        out
    }

    /// Rebuilds moments from checkpoint entries, checking them against the
    /// shapes of `params`.
    pub fn from_entries<M: Module<T> + ?Sized>(entries: &[Entry<T>], step: u64, params: &M) -> Result<Self> {
        let mut shapes = BTreeMap::new();
        params.visit(&mut |p| {
            shapes.insert(p.name.clone(), p.value.shape().to_vec());
        });
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for e in entries {
            let map = match e.kind {
                EntryKind::Moment1 => &mut first,
                EntryKind::Moment2 => &mut second,
                _ => continue,
            };
            match shapes.get(&e.name) {
                Some(s) if s.as_slice() == e.tensor.shape() => {
                    map.insert(e.name.clone(), e.tensor.clone());
                }
                Some(s) => {
                    return Err(Error::CheckpointShape(format!(
                        "moment for `{}` has shape {:?}, parameter is {s:?}",
                        e.name,
                        e.tensor.shape()
                    )))
                }
                None => return Err(Error::CheckpointShape(format!("moment for unknown parameter `{}`", e.name))),
            }
        }
        let mut moments = BTreeMap::new();
        for (name, m) in first {
            let v = second
                .remove(&name)
                .ok_or_else(|| Error::CheckpointShape(format!("`{name}` has a first moment but no second")))?;
            moments.insert(name, (m, v));
        }
        if let Some(name) = second.keys().next() {
            return Err(Error::CheckpointShape(format!("`{name}` has a second moment but no first")));
        }
        Ok(Self { step, moments, ..Self::default() })
    }
}
