use ndarray::{concatenate, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::lm::params::{normal_matrix, Mat};

const RANDOM_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftPromptInit {
    /// Embeddings of the first hard-prompt tokens, random past their end.
    #[default]
    HardPrompt,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftPromptConfig {
    pub length: usize,
    pub init: SoftPromptInit,
}

impl Default for SoftPromptConfig {
    fn default() -> Self {
        Self {
            length: 16,
            init: SoftPromptInit::HardPrompt,
        }
    }
}

/// Learnable vectors placed ahead of the token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrompt {
    pub vectors: Mat,
}

impl SoftPrompt {
    pub fn new(vectors: Mat) -> Result<Self, PromptError> {
        if vectors.nrows() == 0 {
            return Err(PromptError::EmptySoftPrompt);
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(PromptError::NonFiniteSoftPrompt);
        }
        Ok(Self { vectors })
    }

    pub fn random(n: usize, d_model: usize, rng: &mut impl Rng) -> Result<Self, PromptError> {
        Self::new(normal_matrix(n, d_model, RANDOM_INIT_STD, rng))
    }

    /// Copies the embeddings of `ids[..n]`; rows past the end of `ids`
    /// are drawn at random.
    pub fn from_token_embeddings(
        tok_emb: &Mat,
        ids: &[usize],
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, PromptError> {
        let mut vectors = normal_matrix(n, tok_emb.ncols(), RANDOM_INIT_STD, rng);
        for (mut row, &id) in vectors.rows_mut().into_iter().zip(ids) {
            row.assign(&tok_emb.row(id));
        }
        Self::new(vectors)
    }

    pub fn init(
        config: &SoftPromptConfig,
        tok_emb: &Mat,
        hard_prompt_ids: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self, PromptError> {
        match config.init {
            SoftPromptInit::HardPrompt => Self::from_token_embeddings(tok_emb, hard_prompt_ids, config.length, rng),
            SoftPromptInit::Random => Self::random(config.length, tok_emb.ncols(), rng),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }
}

/// Stacks the soft prompt on top of embedded input rows. Positions of the
/// input shift by `sp.len()`.
pub fn prepend_soft_prompt(embedded: &Mat, sp: &SoftPrompt, max_len: usize) -> Result<Mat, PromptError> {
    if embedded.ncols() != sp.vectors.ncols() {
        return Err(PromptError::WidthMismatch {
            expected: embedded.ncols(),
            found: sp.vectors.ncols(),
        });
    }
    let len = sp.len() + embedded.nrows();
    if len > max_len {
        return Err(PromptError::LengthOverflow { len, max_len });
    }
    Ok(concatenate(Axis(0), &[sp.vectors.view(), embedded.view()]).expect("matching widths"))
}
