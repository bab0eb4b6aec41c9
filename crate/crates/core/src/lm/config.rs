use serde::{Deserialize, Serialize};

use super::LmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Decoder: position t attends to positions <= t.
    Causal,
    /// Bidirectional encoder with a mask token.
    Masked,
}

/// Architecture knobs that do not depend on the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub mode: AttentionMode,
    pub tied_output: bool,
    pub init_std: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 512,
            mode: AttentionMode::Causal,
            tied_output: true,
            init_std: 0.02,
        }
    }
}

impl ModelSpec {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            mode: self.mode,
            vocab_size,
            tied_output: self.tied_output,
            init_std: self.init_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub mode: AttentionMode,
    pub vocab_size: usize,
    pub tied_output: bool,
    pub init_std: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |msg: &str| Err(LmError::InvalidConfig(msg.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad("dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.vocab_size < super::vocab::RESERVED_TOKENS.len() {
            return bad("vocab_size smaller than the reserved token set");
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
