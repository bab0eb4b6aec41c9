//! Micro transformer language model usable as a causal decoder or a
//! bidirectional masked model.

mod checkpoint;
mod config;
mod loss;
mod model;
pub mod params;
mod vocab;

use thiserror::Error;

pub use checkpoint::{load_model, save_model, model_from_archive, model_to_archive};
pub use config::{AttentionMode, ModelConfig, ModelSpec};
pub use loss::{batch_loss, example_loss, loss_and_grads, Example, Objective, Target};
pub use model::{log_softmax, GradMask, Gradients, LanguageModel, Logits};
pub use params::{ModelParams, ParamKind};
pub use vocab::{
    split_tokens, truncate_document, TokenSequence, Truncation, Vocabulary, BOS, EOS, MASK, MASK_TOKEN, PAD,
    RESERVED_TOKENS, UNK,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmError {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} positions exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("mask token in a causal-mode sequence")]
    MaskInCausalMode,
    #[error("token id {id} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty batch")]
    EmptyBatch,
    #[error("example target does not match the requested objective")]
    ObjectiveMismatch,
    #[error("model is in {found:?} mode, operation requires {expected:?}")]
    ModeMismatch {
        expected: AttentionMode,
        found: AttentionMode,
    },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
}
