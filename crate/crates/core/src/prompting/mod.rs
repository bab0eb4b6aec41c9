//! Hard templates, verbalizers and learnable soft prompts.

mod soft;
mod template;
mod verbalizer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

pub use soft::{prepend_soft_prompt, SoftPrompt, SoftPromptConfig, SoftPromptInit};
pub use template::{HardTemplate, Rendered, TemplateMode};
pub use verbalizer::Verbalizer;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template slot {0} is missing")]
    SlotMissing(String),
    #[error("template slot {0} appears more than once")]
    DuplicateSlot(String),
    #[error("cloze template must contain exactly one <MASK>, found {0}")]
    MultipleMasks(usize),
    #[error("template slot {0} is not valid in {1:?} mode")]
    UnexpectedSlot(String, TemplateMode),
    #[error("instruction-response template must end with \"Response:\"")]
    MissingResponseAnchor,
    #[error("{{label_phrase}} must come {0} {{input}}")]
    SlotOrder(&'static str),
    #[error("label word {word:?} for {label} has no in-vocabulary tokens")]
    LabelWordOOV { label: Label, word: String },
    #[error("label word {word:?} for {label} must be a single token")]
    MultiTokenLabelWord { label: Label, word: String },
    #[error("label words must be distinct")]
    IdenticalLabelWords,
    #[error("soft prompt must have at least one vector")]
    EmptySoftPrompt,
    #[error("soft prompt contains non-finite values")]
    NonFiniteSoftPrompt,
    #[error("soft prompt width {found} does not match d_model {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("combined length {len} exceeds max_len {max_len}")]
    LengthOverflow { len: usize, max_len: usize },
}

/// Everything a template file describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateConfig {
    pub mode: TemplateMode,
    pub pattern: String,
    #[serde(default)]
    pub instruction: String,
    pub verbalizer: Verbalizer,
    #[serde(default)]
    pub soft_prompt: Option<SoftPromptConfig>,
}

impl TemplateConfig {
    pub fn template(&self) -> Result<HardTemplate, PromptError> {
        HardTemplate::new(self.mode, &self.pattern, &self.instruction)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        self.template()?;
        self.verbalizer.validate()?;
        if let Some(sp) = &self.soft_prompt {
            if sp.length == 0 {
                return Err(PromptError::EmptySoftPrompt);
            }
        }
        Ok(())
    }

    /// All literal text the template can emit, for vocabulary building.
    pub fn literal_texts(&self) -> Vec<&str> {
        let mut out = vec![self.pattern.as_str(), self.instruction.as_str()];
        out.extend(Label::ALL.iter().map(|&l| self.verbalizer.word(l)));
        out
    }
}
