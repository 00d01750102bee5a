use std::sync::atomic::{AtomicU64, Ordering};

use super::{Scalar, Tensor};

static NEXT_PARAM: AtomicU64 = AtomicU64::new(0);

/// Process-unique parameter identity, used to route gradients back to
/// their owner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

/// Trainable tensor with a stable dotted name (`stages.0.blocks.1.ffn.fc1.weight`).
#[derive(Debug)]
pub struct Param<T: Scalar> {
    id: ParamId,
    pub name: String,
    pub value: Tensor<T>,
    /// Excluded from weight decay (biases, norm affines, position tables).
    pub no_decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            id: ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed)),
            name: name.into(),
            value,
            no_decay: false,
        }
    }

    pub fn no_decay(mut self) -> Self {
        self.no_decay = true;
        self
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

impl<T: Scalar> Clone for Param<T> {
    /// Clones get a fresh identity so the copy's gradients never alias the
    /// original's.
    fn clone(&self) -> Self {
        Self {
            id: ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed)),
            name: self.name.clone(),
            value: self.value.clone(),
            no_decay: self.no_decay,
        }
    }
}
