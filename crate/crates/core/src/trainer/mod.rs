//! Fine-tuning loop, trainable-parameter policies and hyperparameter search.

mod optim;
mod search;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, LoraConfig};
use crate::classify::{ClassifyError, CompiledTask, Prediction};
use crate::corpus::Label;
use crate::lm::params::Mat;
use crate::lm::{batch_loss, loss_and_grads, Example, GradMask, Gradients, LanguageModel, LmError, Objective};
use crate::prompting::{PromptError, SoftPrompt, SoftPromptConfig};

pub use optim::{AdamW, DecayPolicy, BETA1, BETA2, EPSILON};
pub use search::{greedy_search, SearchError, SearchGrid, SearchResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub micro_batch_size: usize,
    pub gradient_accumulation_steps: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub decay_policy: DecayPolicy,
    pub seed: u64,
    /// Optimizer steps of linear warmup; 0 keeps the rate constant.
    pub warmup_steps: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            micro_batch_size: 4,
            gradient_accumulation_steps: 1,
            epochs: 10,
            weight_decay: 0.01,
            decay_policy: DecayPolicy::Standard,
            seed: 0,
            warmup_steps: 0,
        }
    }
}

impl Hyperparams {
    pub fn effective_batch(&self) -> usize {
        self.micro_batch_size * self.gradient_accumulation_steps
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &str| Err(TrainError::InvalidHyperparams(field.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate");
        }
        if self.micro_batch_size == 0 {
            return bad("micro_batch_size");
        }
        if self.gradient_accumulation_steps == 0 {
            return bad("gradient_accumulation_steps");
        }
        if self.epochs == 0 {
            return bad("epochs");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay");
        }
        Ok(())
    }

    fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
    }
}

/// Which parameters a run may change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainPolicy {
    FullFinetune,
    Lora(LoraConfig),
    SoftPromptOnly(SoftPromptConfig),
}

impl TrainPolicy {
    pub fn grad_mask(&self) -> GradMask {
        match self {
            Self::FullFinetune => GradMask::BASE,
            Self::Lora(_) => GradMask::ADAPTERS,
            Self::SoftPromptOnly(_) => GradMask::SOFT_PROMPT,
        }
    }

    /// Attaches whatever the policy trains: fresh adapters or a soft prompt
    /// warm-started from `hard_prompt_ids`.
    pub fn prepare(&self, lm: &mut LanguageModel, hard_prompt_ids: &[usize], seed: u64) -> Result<(), TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Self::FullFinetune => {}
            Self::Lora(cfg) => lm.adapters = cfg.attach(&lm.config, &mut rng)?,
            Self::SoftPromptOnly(cfg) => {
                lm.soft_prompt = Some(SoftPrompt::init(cfg, &lm.params.tok_emb, hard_prompt_ids, &mut rng)?);
            }
        }
        Ok(())
    }

    pub fn soft_prompt_len(&self) -> usize {
        match self {
            Self::SoftPromptOnly(cfg) => cfg.length,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid hyperparameter {0}")]
    InvalidHyperparams(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("model mode {found:?} cannot train this strategy, which needs {expected:?}")]
    ModePolicyMismatch {
        expected: crate::lm::AttentionMode,
        found: crate::lm::AttentionMode,
    },
    #[error("policy {0} has nothing to train on this model")]
    PolicyNotPrepared(&'static str),
    #[error("non-finite loss in epoch {epoch}; last good epoch {last_good:?}")]
    NonFiniteLoss { epoch: usize, last_good: Option<usize> },
    #[error(transparent)]
    Lm(LmError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// State after one completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochCheckpoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_predictions: Vec<Prediction>,
    /// Trainable tensors as they stood at the end of the epoch.
    pub snapshot: Vec<(String, Mat)>,
}

impl EpochCheckpoint {
    /// Writes the snapshot back into `lm`.
    pub fn restore(&self, lm: &mut LanguageModel, mask: GradMask) {
        for ((name, _, m), (stored_name, stored)) in lm.tensors_mut(mask).into_iter().zip(&self.snapshot) {
            debug_assert_eq!(&name, stored_name);
            m.assign(stored);
        }
    }
}

/// A tokenized, truncated document with its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDoc {
    pub ids: Vec<usize>,
    pub label: Label,
}

fn lm_err(e: LmError, epoch: usize, last_good: Option<usize>) -> TrainError {
    match e {
        LmError::NonFiniteLoss | LmError::NonFiniteLogits => TrainError::NonFiniteLoss { epoch, last_good },
        other => TrainError::Lm(other),
    }
}

/// One pass over `examples` in `order`, stepping the optimizer after every
/// `gradient_accumulation_steps` micro-batches. Returns the mean
/// micro-batch loss.
pub fn run_epoch(
    lm: &mut LanguageModel,
    opt: &mut AdamW,
    examples: &[Example],
    order: &[usize],
    objective: Objective,
    mask: GradMask,
    hp: &Hyperparams,
) -> Result<f64, LmError> {
    let step_size = hp.effective_batch();
    let mut total = 0.0;
    let mut batches = 0usize;
    for step_idx in order.chunks(step_size) {
        let mut acc: Option<Gradients> = None;
        for micro in step_idx.chunks(hp.micro_batch_size) {
            let batch: Vec<Example> = micro.iter().map(|&i| examples[i].clone()).collect();
            let (loss, mut grads) = loss_and_grads(lm, &batch, objective, mask)?;
            total += loss;
            batches += 1;
            grads.scale(micro.len() as f64 / step_idx.len() as f64);
            match &mut acc {
                Some(a) => a.add_assign(&grads),
                None => acc = Some(grads),
            }
        }
        let lr = hp.lr_at(opt.steps_taken());
        opt.step(lm, &acc.expect("non-empty step"), mask, lr);
    }
    Ok(total / batches.max(1) as f64)
}

/// Trains `lm` under `policy` and returns one checkpoint per epoch.
///
/// The model must already carry what the policy trains (see
/// [`TrainPolicy::prepare`]). Validation predictions and loss are recorded
/// after every epoch when `val` is non-empty.
pub fn train(
    lm: &mut LanguageModel,
    task: &CompiledTask,
    policy: &TrainPolicy,
    train_docs: &[LabeledDoc],
    val_docs: &[LabeledDoc],
    hp: &Hyperparams,
) -> Result<Vec<EpochCheckpoint>, TrainError> {
    hp.validate()?;
    if train_docs.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let expected = task.strategy.attention_mode();
    if lm.config.mode != expected {
        return Err(TrainError::ModePolicyMismatch {
            expected,
            found: lm.config.mode,
        });
    }
    match policy {
        TrainPolicy::Lora(_) if lm.adapters.is_empty() => return Err(TrainError::PolicyNotPrepared("lora")),
        TrainPolicy::SoftPromptOnly(_) if lm.soft_prompt.is_none() => {
            return Err(TrainError::PolicyNotPrepared("soft_prompt_only"))
        }
        _ => {}
    }

    let objective = task.strategy.objective();
    let mask = policy.grad_mask();
    let examples: Vec<Example> = train_docs.iter().map(|d| task.training_example(&d.ids, d.label)).collect();
    let val_examples: Vec<Example> = val_docs.iter().map(|d| task.training_example(&d.ids, d.label)).collect();
    let mut opt = AdamW::new(hp.weight_decay, hp.decay_policy);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut checkpoints: Vec<EpochCheckpoint> = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        let last_good = checkpoints.last().map(|c| c.epoch);
        order.shuffle(&mut rng);
        let train_loss =
            run_epoch(lm, &mut opt, &examples, &order, objective, mask, hp).map_err(|e| lm_err(e, epoch, last_good))?;
        let (val_loss, val_predictions) = if val_docs.is_empty() {
            (None, Vec::new())
        } else {
            let loss = batch_loss(lm, &val_examples, objective).map_err(|e| lm_err(e, epoch, last_good))?;
            let preds = val_docs
                .iter()
                .map(|d| task.predict(lm, &d.ids))
                .collect::<Result<Vec<_>, _>>()?;
            (Some(loss), preds)
        };
        log::debug!("epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:?}");
        checkpoints.push(EpochCheckpoint {
            epoch,
            train_loss,
            val_loss,
            val_predictions,
            snapshot: lm.tensors_mut(mask).into_iter().map(|(n, _, m)| (n, m.clone())).collect(),
        });
    }
    Ok(checkpoints)
}

impl From<LmError> for TrainError {
    fn from(e: LmError) -> Self {
        lm_err(e, 0, None)
    }
}
