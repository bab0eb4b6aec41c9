//! One strategy end to end: vocabulary, model, adaptation, training and a
//! reloadable classifier.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{Granularity, QuantizedWeights};
use crate::archive::ArchiveError;
use crate::classify::{ClassifyError, CompiledTask, Prediction, Strategy};
use crate::corpus::{normalize_text, Document};
use crate::evaluation::{cross_validate, CvError, CvOptions, CvReport, FoldOutcome};
use crate::lm::{load_model, save_model, Example, LanguageModel, LmError, ModelSpec, Truncation, Vocabulary};
use crate::prompting::TemplateConfig;
use crate::trainer::{train, EpochCheckpoint, Hyperparams, LabeledDoc, TrainError, TrainPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub model: ModelSpec,
    pub policy: TrainPolicy,
    pub template: TemplateConfig,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub truncation: Truncation,
    /// Replace frozen base weights with their int8 round trip before
    /// adaptation.
    #[serde(default)]
    pub quantize_base: Option<Granularity>,
}

/// A configuration problem tied to the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    pub fn new(path: impl Into<String>, message: impl ToString) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Prefixes the path with an enclosing table.
    pub fn within(mut self, parent: &str) -> Self {
        self.path = format!("{parent}.{}", self.path);
        self
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        let mode = self.strategy.attention_mode();
        if self.model.mode != mode {
            return Err(FieldError::new(
                "model.mode",
                format!("{:?} strategy needs {mode:?} attention, found {:?}", self.strategy, self.model.mode),
            ));
        }
        self.model
            .with_vocab(8)
            .validate()
            .map_err(|e| FieldError::new("model", e))?;
        self.template.validate().map_err(|e| FieldError::new("template", e))?;
        if !self.strategy.accepts(self.template.mode) {
            return Err(FieldError::new(
                "template.mode",
                format!("{:?} template cannot serve the {:?} strategy", self.template.mode, self.strategy),
            ));
        }
        if let Err(TrainError::InvalidHyperparams(field)) = self.hyperparams.validate() {
            return Err(FieldError::new(format!("hyperparams.{field}"), "must be positive and finite"));
        }
        match &self.policy {
            TrainPolicy::Lora(cfg) => {
                let targets = cfg.spec(self.model.n_layers);
                crate::adapters::trainable_param_count(&self.model.with_vocab(8), &targets)
                    .map_err(|e| FieldError::new("policy", e))?;
            }
            TrainPolicy::SoftPromptOnly(cfg) if cfg.length == 0 || cfg.length >= self.model.max_len => {
                return Err(FieldError::new("policy.length", "must be in 1..max_len"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] FieldError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("checkpoint holds a {stored:?} classifier, expected {expected:?}")]
    StrategyMismatch { expected: Strategy, stored: Strategy },
    #[error("checkpoint is not a classifier: {0}")]
    NotAClassifier(String),
}

impl PipelineError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, Self::Train(TrainError::NonFiniteLoss { .. }))
    }
}

/// A trained model together with the task that reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub lm: LanguageModel,
    pub task: CompiledTask,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskRecord {
    strategy: Strategy,
    template: TemplateConfig,
    vocab: Vocabulary,
    truncation: Truncation,
}

impl Classifier {
    /// Classifies raw text after the same normalization as corpus
    /// documents.
    pub fn predict_text(&self, text: &str) -> Result<Prediction, ClassifyError> {
        let doc = self.task.fit_document(&normalize_text(text));
        self.task.predict(&self.lm, &doc)
    }

    pub fn save(&self, path: &Path, template: &TemplateConfig, extra: serde_json::Value) -> Result<(), PipelineError> {
        let record = TaskRecord {
            strategy: self.task.strategy,
            template: template.clone(),
            vocab: self.task.vocab.clone(),
            truncation: self.task.truncation,
        };
        let meta = serde_json::json!({ "task": record, "run": extra });
        Ok(save_model(&self.lm, meta, path)?)
    }

    /// Loads a saved classifier, optionally requiring a strategy.
    pub fn load(path: &Path, expected: Option<Strategy>) -> Result<(Self, serde_json::Value), PipelineError> {
        let (lm, meta) = load_model(path)?;
        let record: TaskRecord = serde_json::from_value(meta["task"].clone())
            .map_err(|e| PipelineError::NotAClassifier(e.to_string()))?;
        if let Some(expected) = expected {
            if expected != record.strategy {
                return Err(PipelineError::StrategyMismatch {
                    expected,
                    stored: record.strategy,
                });
            }
        }
        if lm.config.mode != record.strategy.attention_mode() || lm.config.vocab_size != record.vocab.len() {
            return Err(PipelineError::NotAClassifier("model and task disagree".into()));
        }
        let task = CompiledTask::new(
            record.strategy,
            &record.template,
            record.vocab,
            lm.config.max_len,
            lm.prefix_len(),
            record.truncation,
        )?;
        Ok((Self { lm, task }, meta["run"].clone()))
    }
}

fn labeled(task: &CompiledTask, docs: &[Document]) -> Vec<LabeledDoc> {
    docs.iter()
        .map(|d| LabeledDoc {
            ids: task.fit_document(&d.text),
            label: d.label,
        })
        .collect()
}

/// Builds the vocabulary from `train_docs` and returns an initialized,
/// adapted but untrained classifier.
pub fn prepare_classifier(cfg: &PipelineConfig, train_docs: &[Document]) -> Result<Classifier, PipelineError> {
    cfg.validate()?;
    let vocab = CompiledTask::build_vocab(&cfg.template, train_docs.iter().map(|d| d.text.as_str()));
    let task = CompiledTask::new(
        cfg.strategy,
        &cfg.template,
        vocab,
        cfg.model.max_len,
        cfg.policy.soft_prompt_len(),
        cfg.truncation,
    )?;
    let seed = cfg.hyperparams.seed;
    let mut lm = LanguageModel::init(cfg.model.with_vocab(task.vocab.len()), seed)?;
    if let Some(granularity) = cfg.quantize_base {
        QuantizedWeights::from_params(&lm.params, granularity).load_into(&mut lm.params);
    }
    cfg.policy.prepare(&mut lm, &task.hard_prompt_ids(), seed.wrapping_add(1))?;
    Ok(Classifier { lm, task })
}

/// Training examples for `docs` under the classifier's task.
pub fn training_examples(task: &CompiledTask, docs: &[Document]) -> Vec<Example> {
    labeled(task, docs)
        .iter()
        .map(|d| task.training_example(&d.ids, d.label))
        .collect()
}

/// Prepares a classifier on `train_docs` and trains it. `val_docs` are
/// predicted after every epoch.
pub fn train_classifier(
    cfg: &PipelineConfig,
    train_docs: &[Document],
    val_docs: &[Document],
) -> Result<(Classifier, Vec<EpochCheckpoint>), PipelineError> {
    let Classifier { mut lm, task } = prepare_classifier(cfg, train_docs)?;
    let checkpoints = train(
        &mut lm,
        &task,
        &cfg.policy,
        &labeled(&task, train_docs),
        &labeled(&task, val_docs),
        &cfg.hyperparams,
    )?;
    Ok((Classifier { lm, task }, checkpoints))
}

/// Cross-validates `cfg` on `docs`.
pub fn run_cv(docs: &[Document], cfg: &PipelineConfig, opts: &CvOptions) -> Result<CvReport, CvError<PipelineError>> {
    cross_validate(docs, opts, |_, train_docs, val_docs| {
        let (_, checkpoints) = train_classifier(cfg, train_docs, val_docs)?;
        Ok(FoldOutcome {
            epoch_predictions: checkpoints.iter().map(|c| c.val_predictions.clone()).collect(),
            train_losses: checkpoints.iter().map(|c| c.train_loss).collect(),
            val_losses: checkpoints.iter().map(|c| c.val_loss).collect(),
        })
    })
}
