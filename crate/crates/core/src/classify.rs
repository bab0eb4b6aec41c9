//! The three classification strategies and the per-fold task that ties a
//! template, verbalizer and vocabulary to training examples and predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::lm::{
    log_softmax, split_tokens, truncate_document, AttentionMode, Example, LanguageModel, LmError, Objective, Target,
    Truncation, Vocabulary, EOS,
};
use crate::prompting::{HardTemplate, PromptError, Rendered, TemplateConfig, TemplateMode, Verbalizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Label-word logits at a cloze mask.
    Verbalizer,
    /// Constrained scoring of label response strings after an instruction.
    Generative,
    /// Likelihood of the document under each label phrase.
    Conditional,
}

impl Strategy {
    pub fn attention_mode(self) -> AttentionMode {
        match self {
            Self::Verbalizer => AttentionMode::Masked,
            Self::Generative | Self::Conditional => AttentionMode::Causal,
        }
    }

    pub fn objective(self) -> Objective {
        match self {
            Self::Verbalizer => Objective::MaskLabelCe,
            Self::Generative | Self::Conditional => Objective::NextTokenCe,
        }
    }

    pub fn accepts(self, mode: TemplateMode) -> bool {
        match self {
            Self::Verbalizer => mode == TemplateMode::Cloze,
            Self::Generative => mode == TemplateMode::InstructionResponse,
            Self::Conditional => mode.is_conditional(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("sequence of {len} positions exceeds max_len {max_len}")]
    LengthOverflow { len: usize, max_len: usize },
    #[error("a non-empty continuation needs at least one conditioning position")]
    EmptyPrefix,
    #[error("{strategy:?} strategy cannot use a {mode:?} template")]
    TemplateMismatch { strategy: Strategy, mode: TemplateMode },
    #[error("template leaves no room for the document: overhead {overhead} with max_len {max_len}")]
    NoDocumentBudget { overhead: usize, max_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub score_ad: f64,
    pub score_hc: f64,
    pub tie: bool,
    pub strategy: Strategy,
}

impl Prediction {
    /// Argmax over `scores` (indexed by [`Label::index`]); ties go to AD.
    pub fn from_scores(scores: [f64; 2], strategy: Strategy) -> Self {
        let [score_ad, score_hc] = scores;
        Self {
            label: if score_hc > score_ad { Label::HC } else { Label::AD },
            score_ad,
            score_hc,
            tie: score_ad == score_hc,
            strategy,
        }
    }

    pub fn score(&self, label: Label) -> f64 {
        match label {
            Label::AD => self.score_ad,
            Label::HC => self.score_hc,
        }
    }
}

fn require_mode(lm: &LanguageModel, expected: AttentionMode) -> Result<(), ClassifyError> {
    if lm.config.mode != expected {
        return Err(LmError::ModeMismatch {
            expected,
            found: lm.config.mode,
        }
        .into());
    }
    Ok(())
}

fn check_length(lm: &LanguageModel, len: usize) -> Result<(), ClassifyError> {
    let len = len + lm.prefix_len();
    if len > lm.config.max_len {
        return Err(ClassifyError::LengthOverflow {
            len,
            max_len: lm.config.max_len,
        });
    }
    Ok(())
}

/// Log-probabilities of the two label words at `position`, renormalized over
/// the pair.
pub fn verbalizer_scores(
    lm: &LanguageModel,
    ids: &[usize],
    position: usize,
    label_ids: [usize; 2],
) -> Result<[f64; 2], ClassifyError> {
    require_mode(lm, AttentionMode::Masked)?;
    check_length(lm, ids.len())?;
    let logits = lm.forward(ids)?;
    let row = logits.token_row(position);
    let pair = ndarray::arr1(&[row[label_ids[0]], row[label_ids[1]]]);
    let lp = log_softmax(pair.view());
    Ok([lp[0], lp[1]])
}

pub fn classify_verbalizer(
    lm: &LanguageModel,
    vocab: &Vocabulary,
    template: &HardTemplate,
    verbalizer: &Verbalizer,
    doc: &[usize],
) -> Result<Prediction, ClassifyError> {
    if template.mode() != TemplateMode::Cloze {
        return Err(ClassifyError::TemplateMismatch {
            strategy: Strategy::Verbalizer,
            mode: template.mode(),
        });
    }
    let label_ids = verbalizer.single_token_ids(vocab)?;
    let Rendered { ids, anchor } = template.render(vocab, doc, "");
    let scores = verbalizer_scores(lm, &ids, anchor, label_ids)?;
    Ok(Prediction::from_scores(scores, Strategy::Verbalizer))
}

/// `log P(continuation | prefix)` by the chain rule under a causal model.
pub fn sequence_log_prob(lm: &LanguageModel, prefix: &[usize], continuation: &[usize]) -> Result<f64, ClassifyError> {
    require_mode(lm, AttentionMode::Causal)?;
    if continuation.is_empty() {
        return Ok(0.0);
    }
    if prefix.is_empty() && lm.prefix_len() == 0 {
        return Err(ClassifyError::EmptyPrefix);
    }
    let ids: Vec<usize> = prefix.iter().chain(continuation).copied().collect();
    check_length(lm, ids.len())?;
    let logits = lm.forward(&ids)?;
    Ok((prefix.len()..ids.len())
        .map(|t| {
            let row = logits.predicting_row(t).expect("conditioning position exists");
            log_softmax(row)[ids[t]]
        })
        .sum())
}

fn conditional_scores(
    lm: &LanguageModel,
    vocab: &Vocabulary,
    template: &HardTemplate,
    verbalizer: &Verbalizer,
    doc: &[usize],
) -> Result<[f64; 2], ClassifyError> {
    let mut scores = [0.0; 2];
    for label in Label::ALL {
        let r = template.render(vocab, doc, verbalizer.word(label));
        scores[label.index()] = sequence_log_prob(lm, &r.ids[..r.anchor], &r.ids[r.anchor..])?;
    }
    Ok(scores)
}

pub fn classify_conditional(
    lm: &LanguageModel,
    vocab: &Vocabulary,
    template: &HardTemplate,
    verbalizer: &Verbalizer,
    doc: &[usize],
) -> Result<Prediction, ClassifyError> {
    if !template.mode().is_conditional() {
        return Err(ClassifyError::TemplateMismatch {
            strategy: Strategy::Conditional,
            mode: template.mode(),
        });
    }
    let scores = conditional_scores(lm, vocab, template, verbalizer, doc)?;
    Ok(Prediction::from_scores(scores, Strategy::Conditional))
}

/// Per-token mean log-probability of each label's response string.
pub fn classify_generative(
    lm: &LanguageModel,
    vocab: &Vocabulary,
    template: &HardTemplate,
    verbalizer: &Verbalizer,
    doc: &[usize],
) -> Result<Prediction, ClassifyError> {
    if template.mode() != TemplateMode::InstructionResponse {
        return Err(ClassifyError::TemplateMismatch {
            strategy: Strategy::Generative,
            mode: template.mode(),
        });
    }
    let responses = verbalizer.token_ids(vocab)?;
    let prompt = template.render(vocab, doc, "").ids;
    let mut scores = [0.0; 2];
    for label in Label::ALL {
        let resp = &responses[label.index()];
        scores[label.index()] = sequence_log_prob(lm, &prompt, resp)? / resp.len() as f64;
    }
    Ok(Prediction::from_scores(scores, Strategy::Generative))
}

/// Greedy decoding of up to `max_new` tokens, stopping after EOS.
pub fn generate_greedy(lm: &LanguageModel, prompt: &[usize], max_new: usize) -> Result<Vec<usize>, ClassifyError> {
    require_mode(lm, AttentionMode::Causal)?;
    if prompt.is_empty() && lm.prefix_len() == 0 {
        return Err(ClassifyError::EmptyPrefix);
    }
    let mut ids = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && ids.len() + lm.prefix_len() < lm.config.max_len {
        let logits = lm.forward(&ids)?;
        let row = logits.predicting_row(ids.len()).expect("non-empty context");
        let next = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        if next == EOS {
            break;
        }
        out.push(next);
        ids.push(next);
    }
    Ok(out)
}

/// Free-text decode followed by exact matching against the response set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeDecode {
    pub text: String,
    pub label: Option<Label>,
}

pub fn classify_free_decode(
    lm: &LanguageModel,
    vocab: &Vocabulary,
    template: &HardTemplate,
    verbalizer: &Verbalizer,
    doc: &[usize],
) -> Result<FreeDecode, ClassifyError> {
    let responses = verbalizer.token_ids(vocab)?;
    let max_new = responses.iter().map(Vec::len).max().unwrap_or(0) + 1;
    let prompt = template.render(vocab, doc, "").ids;
    let out = generate_greedy(lm, &prompt, max_new)?;
    let label = Label::ALL.into_iter().find(|l| responses[l.index()] == out);
    Ok(FreeDecode {
        text: vocab.detokenize(&out),
        label,
    })
}

/// Template, verbalizer and vocabulary bound together for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledTask {
    pub strategy: Strategy,
    pub vocab: Vocabulary,
    pub template: HardTemplate,
    pub verbalizer: Verbalizer,
    pub truncation: Truncation,
    label_ids: [Vec<usize>; 2],
    doc_budget: usize,
}

impl CompiledTask {
    /// `prefix_len` is the soft-prompt length the model will carry.
    pub fn new(
        strategy: Strategy,
        config: &TemplateConfig,
        vocab: Vocabulary,
        max_len: usize,
        prefix_len: usize,
        truncation: Truncation,
    ) -> Result<Self, ClassifyError> {
        let template = config.template()?;
        if !strategy.accepts(template.mode()) {
            return Err(ClassifyError::TemplateMismatch {
                strategy,
                mode: template.mode(),
            });
        }
        let verbalizer = config.verbalizer.clone();
        let label_ids = match strategy {
            Strategy::Verbalizer => verbalizer.single_token_ids(&vocab)?.map(|id| vec![id]),
            _ => verbalizer.token_ids(&vocab)?,
        };
        let phrases = [verbalizer.ad.as_str(), verbalizer.hc.as_str()];
        let mut overhead = prefix_len + template.overhead(&vocab, &phrases);
        if strategy == Strategy::Generative {
            // Training appends the longest response plus EOS.
            overhead += label_ids.iter().map(Vec::len).max().unwrap_or(0) + 1;
        }
        if overhead >= max_len {
            return Err(ClassifyError::NoDocumentBudget { overhead, max_len });
        }
        Ok(Self {
            strategy,
            vocab,
            template,
            verbalizer,
            truncation,
            label_ids,
            doc_budget: max_len - overhead,
        })
    }

    /// Builds a vocabulary over `texts` plus every template literal.
    pub fn build_vocab<'a>(config: &'a TemplateConfig, texts: impl IntoIterator<Item = &'a str>) -> Vocabulary {
        Vocabulary::build(texts.into_iter().chain(config.literal_texts()))
    }

    pub fn doc_budget(&self) -> usize {
        self.doc_budget
    }

    /// Encodes and truncates document text to fit the template.
    pub fn fit_document(&self, text: &str) -> Vec<usize> {
        truncate_document(&self.vocab.encode(text), self.doc_budget, self.truncation)
    }

    /// Hard-prompt token ids used to warm-start a soft prompt.
    pub fn hard_prompt_ids(&self) -> Vec<usize> {
        let r = self.template.render(&self.vocab, &[], self.verbalizer.word(Label::AD));
        r.ids
    }

    pub fn training_example(&self, doc: &[usize], label: Label) -> Example {
        match self.strategy {
            Strategy::Verbalizer => {
                let r = self.template.render(&self.vocab, doc, "");
                Example {
                    ids: r.ids,
                    target: Target::MaskLabel {
                        position: r.anchor,
                        candidates: self.label_ids.iter().map(|ids| ids[0]).collect(),
                        gold: label.index(),
                    },
                }
            }
            Strategy::Generative => {
                let mut ids = self.template.render(&self.vocab, doc, "").ids;
                let start = ids.len();
                ids.extend_from_slice(&self.label_ids[label.index()]);
                ids.push(EOS);
                Example {
                    ids,
                    target: Target::NextToken { start },
                }
            }
            Strategy::Conditional => {
                let r = self.template.render(&self.vocab, doc, self.verbalizer.word(label));
                Example {
                    ids: r.ids,
                    target: Target::NextToken { start: r.anchor },
                }
            }
        }
    }

    pub fn predict(&self, lm: &LanguageModel, doc: &[usize]) -> Result<Prediction, ClassifyError> {
        match self.strategy {
            Strategy::Verbalizer => {
                let r = self.template.render(&self.vocab, doc, "");
                let ids = [self.label_ids[0][0], self.label_ids[1][0]];
                let scores = verbalizer_scores(lm, &r.ids, r.anchor, ids)?;
                Ok(Prediction::from_scores(scores, Strategy::Verbalizer))
            }
            Strategy::Generative => classify_generative(lm, &self.vocab, &self.template, &self.verbalizer, doc),
            Strategy::Conditional => classify_conditional(lm, &self.vocab, &self.template, &self.verbalizer, doc),
        }
    }

    /// Whether a text's tokens are all in the vocabulary.
    pub fn covers(&self, text: &str) -> bool {
        split_tokens(text).iter().all(|t| self.vocab.id(t).is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelSpec;

    fn uniform(mode: AttentionMode, vocab: usize) -> LanguageModel {
        let spec = ModelSpec {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_len: 32,
            mode,
            ..Default::default()
        };
        let mut lm = LanguageModel::init(spec.with_vocab(vocab), 3).unwrap();
        lm.params.ln_f.gain.fill(0.0);
        lm.params.ln_f.bias.fill(0.0);
        lm
    }

    #[test]
    fn hand_softmax_pair() {
        let p = Prediction::from_scores([(2f64.exp() / (2f64.exp() + 1.0)).ln(), (1.0 / (2f64.exp() + 1.0)).ln()], Strategy::Verbalizer);
        assert_eq!(p.label, Label::AD);
        assert!((p.score_ad.exp() - 0.8808).abs() < 5e-5);
        assert!((p.score_hc.exp() - 0.1192).abs() < 5e-5);
        let tie = Prediction::from_scores([-0.5, -0.5], Strategy::Verbalizer);
        assert!(tie.tie);
        assert_eq!(tie.label, Label::AD);
    }

    #[test]
    fn uniform_sequence_log_prob() {
        let lm = uniform(AttentionMode::Causal, 11);
        let lp = sequence_log_prob(&lm, &[5, 6], &[7, 8, 9]).unwrap();
        assert!((lp + 3.0 * 11f64.ln()).abs() < 1e-12);
        assert_eq!(sequence_log_prob(&lm, &[5], &[]).unwrap(), 0.0);
        assert_eq!(sequence_log_prob(&lm, &[], &[5]), Err(ClassifyError::EmptyPrefix));
        assert!(matches!(
            sequence_log_prob(&lm, &[5; 30], &[6; 3]),
            Err(ClassifyError::LengthOverflow { len: 33, max_len: 32 })
        ));
        let masked = uniform(AttentionMode::Masked, 11);
        assert!(matches!(
            sequence_log_prob(&masked, &[5], &[6]),
            Err(ClassifyError::Lm(LmError::ModeMismatch { .. }))
        ));
    }

    #[test]
    fn length_normalization_on_uniform_model() {
        let vocab = Vocabulary::build(["Input: Instruction: Response: Healthy Dementia uh the"]);
        let lm = uniform(AttentionMode::Causal, vocab.len());
        let t = HardTemplate::new(TemplateMode::InstructionResponse, "Input: {input} Instruction: {instruction} Response:", "").unwrap();
        let doc = vocab.encode("the uh");
        let v1 = Verbalizer::new("Dementia", "Healthy");
        let v2 = Verbalizer::new("Dementia", "Healthy Healthy");
        let p1 = classify_generative(&lm, &vocab, &t, &v1, &doc).unwrap();
        let p2 = classify_generative(&lm, &vocab, &t, &v2, &doc).unwrap();
        let ln_v = (vocab.len() as f64).ln();
        assert!((p1.score_hc + ln_v).abs() < 1e-12);
        assert!((p2.score_hc + ln_v).abs() < 1e-12);
    }

    #[test]
    fn conditional_swap_symmetry() {
        let vocab = Vocabulary::build(["yes no the boy fell ."]);
        let lm = LanguageModel::init(
            ModelSpec {
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                d_ff: 16,
                max_len: 32,
                ..Default::default()
            }
            .with_vocab(vocab.len()),
            5,
        )
        .unwrap();
        let t = HardTemplate::new(TemplateMode::ConditionalPrefix, "{label_phrase} {input}", "").unwrap();
        let doc = vocab.encode("the boy fell .");
        let a = classify_conditional(&lm, &vocab, &t, &Verbalizer::new("yes", "no"), &doc).unwrap();
        let b = classify_conditional(&lm, &vocab, &t, &Verbalizer::new("no", "yes"), &doc).unwrap();
        assert_eq!(a.score_ad, b.score_hc);
        assert_eq!(a.score_hc, b.score_ad);
        let same = classify_conditional(&lm, &vocab, &t, &Verbalizer::new("yes", "yes"), &doc).unwrap();
        assert!(same.tie);
        assert_eq!(same.label, Label::AD);
    }

    #[test]
    fn free_decode_stops_and_matches() {
        let vocab = Vocabulary::build(["Input: Instruction: Response: Healthy Dementia uh the"]);
        let lm = uniform(AttentionMode::Causal, vocab.len());
        let t = HardTemplate::new(TemplateMode::InstructionResponse, "Input: {input} Instruction: {instruction} Response:", "").unwrap();
        let out = classify_free_decode(&lm, &vocab, &t, &Verbalizer::new("Dementia", "Healthy"), &[]).unwrap();
        // Uniform logits pick id 0 repeatedly, which is no response.
        assert_eq!(out.label, None);
        assert_eq!(out.text, "<PAD> <PAD>");
    }
}
