//! Parameterized layers and the [`Module`] traversal trait.

mod gradcheck;
mod init;
mod layers;

pub use gradcheck::check_module;
pub use init::{Init, WEIGHT_STD};
pub use layers::{BatchNorm2d, Conv2d, DepthwiseConv2d, LayerNorm, Linear};

use crate::tensor::{BnStats, Param, Scalar};

/// Whether batch-norm layers use batch statistics (and update their
/// running estimates) or the stored running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn training(self) -> bool {
        self == Mode::Train
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    /// Non-trainable state that still belongs in a checkpoint.
    fn visit_buffers(&self, _f: &mut dyn FnMut(&str, &BnStats<T>)) {}

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.numel());
        n
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Option<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(m) = self {
            m.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(m) = self {
            m.visit_mut(f);
        }
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &BnStats<T>)) {
        if let Some(m) = self {
            m.visit_buffers(f);
        }
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Vec<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.iter().for_each(|m| m.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.iter_mut().for_each(|m| m.visit_mut(f));
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &BnStats<T>)) {
        self.iter().for_each(|m| m.visit_buffers(f));
    }
}

/// Implements [`Module`] by visiting the listed fields in order.
macro_rules! module_fields {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: $crate::tensor::Scalar> $crate::nn::Module<T> for $ty<T> {
            fn visit(&self, f: &mut dyn FnMut(&$crate::tensor::Param<T>)) {
                $( $crate::nn::Module::visit(&self.$field, f); )*
            }

            fn visit_mut(&mut self, f: &mut dyn FnMut(&mut $crate::tensor::Param<T>)) {
                $( $crate::nn::Module::visit_mut(&mut self.$field, f); )*
            }

            fn visit_buffers(&self, f: &mut dyn FnMut(&str, &$crate::tensor::BnStats<T>)) {
                $( $crate::nn::Module::visit_buffers(&self.$field, f); )*
            }
        }
    };
}
pub(crate) use module_fields;

impl<T: Scalar> Module<T> for Param<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(self)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(self)
    }
}
