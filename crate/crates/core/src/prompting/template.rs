use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::lm::{split_tokens, AttentionMode, Vocabulary, BOS, MASK, MASK_TOKEN};

const INPUT: &str = "{input}";
const INSTRUCTION: &str = "{instruction}";
const LABEL_PHRASE: &str = "{label_phrase}";
const RESPONSE_ANCHOR: &str = "Response:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    Cloze,
    InstructionResponse,
    ConditionalPrefix,
    ConditionalSuffix,
}

impl TemplateMode {
    pub fn attention_mode(self) -> AttentionMode {
        match self {
            Self::Cloze => AttentionMode::Masked,
            _ => AttentionMode::Causal,
        }
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, Self::ConditionalPrefix | Self::ConditionalSuffix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Input,
    Instruction,
    LabelPhrase,
}

/// A validated hard template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardTemplate {
    mode: TemplateMode,
    instruction: String,
    segments: Vec<Segment>,
}

/// Rendered token ids plus the strategy anchor.
///
/// The anchor is the mask index (cloze), the index one past the final
/// template token (instruction-response) or the first scored token
/// (conditional).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub ids: Vec<usize>,
    pub anchor: usize,
}

fn split_segments(pattern: &str) -> Vec<Segment> {
    let slots = [(INPUT, Segment::Input), (INSTRUCTION, Segment::Instruction), (LABEL_PHRASE, Segment::LabelPhrase)];
    let mut out = Vec::new();
    let mut rest = pattern;
    loop {
        let next = slots
            .iter()
            .filter_map(|(s, seg)| rest.find(s).map(|i| (i, s.len(), seg)))
            .min_by_key(|&(i, _, _)| i);
        match next {
            Some((i, len, seg)) => {
                if i > 0 {
                    out.push(Segment::Text(rest[..i].to_string()));
                }
                out.push(seg.clone());
                rest = &rest[i + len..];
            }
            None => {
                if !rest.is_empty() {
                    out.push(Segment::Text(rest.to_string()));
                }
                return out;
            }
        }
    }
}

impl HardTemplate {
    pub fn new(mode: TemplateMode, pattern: &str, instruction: &str) -> Result<Self, PromptError> {
        let segments = split_segments(pattern);
        let count = |seg: &Segment| segments.iter().filter(|s| *s == seg).count();
        let pos = |seg: &Segment| segments.iter().position(|s| s == seg);
        let masks: usize = segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => split_tokens(t).iter().filter(|&&tok| tok == MASK_TOKEN).count(),
                _ => 0,
            })
            .sum();

        match count(&Segment::Input) {
            0 => return Err(PromptError::SlotMissing(INPUT.into())),
            1 => {}
            _ => return Err(PromptError::DuplicateSlot(INPUT.into())),
        }
        if count(&Segment::Instruction) > 1 {
            return Err(PromptError::DuplicateSlot(INSTRUCTION.into()));
        }
        if count(&Segment::LabelPhrase) > 1 {
            return Err(PromptError::DuplicateSlot(LABEL_PHRASE.into()));
        }
        if mode != TemplateMode::Cloze && masks > 0 {
            return Err(PromptError::UnexpectedSlot(MASK_TOKEN.into(), mode));
        }
        if !mode.is_conditional() && count(&Segment::LabelPhrase) > 0 {
            return Err(PromptError::UnexpectedSlot(LABEL_PHRASE.into(), mode));
        }
        match mode {
            TemplateMode::Cloze => {
                if masks == 0 {
                    return Err(PromptError::SlotMissing(MASK_TOKEN.into()));
                }
                if masks > 1 {
                    return Err(PromptError::MultipleMasks(masks));
                }
            }
            TemplateMode::InstructionResponse => {
                if count(&Segment::Instruction) == 0 {
                    return Err(PromptError::SlotMissing(INSTRUCTION.into()));
                }
                let ends_at_anchor = matches!(segments.last(), Some(Segment::Text(t)) if t.trim_end().ends_with(RESPONSE_ANCHOR));
                if !ends_at_anchor {
                    return Err(PromptError::MissingResponseAnchor);
                }
            }
            TemplateMode::ConditionalPrefix | TemplateMode::ConditionalSuffix => {
                let label = pos(&Segment::LabelPhrase).ok_or_else(|| PromptError::SlotMissing(LABEL_PHRASE.into()))?;
                let input = pos(&Segment::Input).expect("checked above");
                if mode == TemplateMode::ConditionalPrefix && label > input {
                    return Err(PromptError::SlotOrder("before"));
                }
                if mode == TemplateMode::ConditionalSuffix && label < input {
                    return Err(PromptError::SlotOrder("after"));
                }
            }
        }
        Ok(Self {
            mode,
            instruction: instruction.to_string(),
            segments,
        })
    }

    pub fn mode(&self) -> TemplateMode {
        self.mode
    }

    /// Renders `doc` (already token ids) into the template.
    ///
    /// Causal modes start with BOS. `label_phrase` fills the conditional
    /// slot and is ignored elsewhere.
    pub fn render(&self, vocab: &Vocabulary, doc: &[usize], label_phrase: &str) -> Rendered {
        let mut ids = Vec::new();
        if self.mode != TemplateMode::Cloze {
            ids.push(BOS);
        }
        let mut input_start = 0;
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => ids.extend(vocab.encode(t)),
                Segment::Instruction => ids.extend(vocab.encode(&self.instruction)),
                Segment::LabelPhrase => ids.extend(vocab.encode(label_phrase)),
                Segment::Input => {
                    input_start = ids.len();
                    ids.extend_from_slice(doc);
                }
            }
        }
        let anchor = match self.mode {
            TemplateMode::Cloze => ids.iter().position(|&id| id == MASK).expect("validated single mask"),
            TemplateMode::InstructionResponse => ids.len(),
            TemplateMode::ConditionalPrefix => input_start,
            // With the label after the text, the whole sequence is scored.
            TemplateMode::ConditionalSuffix => 1,
        };
        Rendered { ids, anchor }
    }

    /// Template tokens emitted around the document for the longest label
    /// phrase, i.e. `max_len - overhead` is the document budget.
    pub fn overhead(&self, vocab: &Vocabulary, label_phrases: &[&str]) -> usize {
        let phrases: &[&str] = if label_phrases.is_empty() { &[""] } else { label_phrases };
        phrases
            .iter()
            .map(|p| self.render(vocab, &[], p).ids.len())
            .max()
            .unwrap_or(0)
    }
}
