//! Resource-reduction mechanisms: LoRA adapters and int8 weight storage.

mod checkpoint;
mod lora;
mod quant;

use thiserror::Error;

pub use checkpoint::{adapters_from_archive, adapters_to_archive, load_adapters, save_adapters};
pub use lora::{
    apply_lora, merge_lora, target_shape, trainable_param_count, unmerge_lora, AdapterSet, LoraAdapter,
    LoraConfig, LoraTarget,
};
pub use quant::{quantize_int8, quantize_int8_with, Granularity, QuantizedMatrix, QuantizedWeights};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rank {rank} out of range: must satisfy 1 <= r < {max_exclusive}")]
    RankOutOfRange { rank: usize, max_exclusive: usize },
    #[error("unknown adapter target {0}")]
    UnknownTarget(String),
}
