//! Building blocks of the network: local feature extraction, multi-scale
//! attention, convolutional feature fusion, the feed-forward layer, the
//! transformer block that wires them, and the stem/embedding/head layers.

mod attention;
mod block;
mod cff;
mod embed;
mod lfe;

pub use attention::{attention_head, head_groups, spatial_reduce, AttentionKind, HeadGroup, Lmssa, Reducer};
pub use block::{BlockSpec, Ffn, MscBlock};
pub use cff::Cff;
pub use embed::{ClassifierHead, ConvStem, PatchEmbed};
pub use lfe::Lfe;
