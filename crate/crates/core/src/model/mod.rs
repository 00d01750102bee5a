//! Model configurations, the assembled network, its cost model and
//! checkpoints.

mod checkpoint;
mod complexity;
mod config;
mod network;

pub use checkpoint::{Checkpoint, Entry, EntryKind, MAGIC, VERSION};
pub use complexity::{
    complexity_ffn, complexity_lmssa, complexity_mhsa, count_params_for, estimate_flops, ComplexityReport, LayerCost,
    FLOPS_PER_MAC,
};
pub use config::{KernelSchedule, ModelConfig, StageConfig, Variant, DEFAULT_SPLITS};
pub use network::{build_model, Model, Stage};
