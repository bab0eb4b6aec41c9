use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::corpus::Label;
use crate::lm::Vocabulary;

/// Label words (cloze), response strings (generative) or label phrases
/// (conditional), one per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verbalizer {
    #[serde(rename = "AD")]
    pub ad: String,
    #[serde(rename = "HC")]
    pub hc: String,
}

impl Verbalizer {
    pub fn new(ad: impl Into<String>, hc: impl Into<String>) -> Self {
        Self {
            ad: ad.into(),
            hc: hc.into(),
        }
    }

    pub fn word(&self, label: Label) -> &str {
        match label {
            Label::AD => &self.ad,
            Label::HC => &self.hc,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.ad.trim() == self.hc.trim() {
            return Err(PromptError::IdenticalLabelWords);
        }
        Ok(())
    }

    /// Token ids of each label's words, indexed by [`Label::index`].
    pub fn token_ids(&self, vocab: &Vocabulary) -> Result<[Vec<usize>; 2], PromptError> {
        self.validate()?;
        let ids = |label: Label| {
            let word = self.word(label);
            match vocab.encode_known(word) {
                Some(ids) if !ids.is_empty() => Ok(ids),
                _ => Err(PromptError::LabelWordOOV {
                    label,
                    word: word.to_string(),
                }),
            }
        };
        Ok([ids(Label::AD)?, ids(Label::HC)?])
    }

    /// Single token id per label, as required at a mask slot.
    pub fn single_token_ids(&self, vocab: &Vocabulary) -> Result<[usize; 2], PromptError> {
        let [ad, hc] = self.token_ids(vocab)?;
        let one = |label: Label, ids: Vec<usize>| match ids[..] {
            [id] => Ok(id),
            _ => Err(PromptError::MultiTokenLabelWord {
                label,
                word: self.word(label).to_string(),
            }),
        };
        Ok([one(Label::AD, ad)?, one(Label::HC, hc)?])
    }
}
