use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{log_softmax, ForwardCache, GradMask, Gradients, LanguageModel, Logits};
use super::{AttentionMode, LmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Cross-entropy over the label-word logits at the mask position.
    MaskLabelCe,
    /// Next-token cross-entropy over a suffix of the sequence.
    NextTokenCe,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// `candidates` are token ids competing at `position`; `gold` indexes
    /// into `candidates`.
    MaskLabel {
        position: usize,
        candidates: Vec<usize>,
        gold: usize,
    },
    /// Every token at index >= `start` is predicted from its prefix.
    NextToken { start: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub target: Target,
}

impl Example {
    pub fn objective(&self) -> Objective {
        match self.target {
            Target::MaskLabel { .. } => Objective::MaskLabelCe,
            Target::NextToken { .. } => Objective::NextTokenCe,
        }
    }
}

fn check_example(lm: &LanguageModel, ex: &Example, objective: Objective) -> Result<(), LmError> {
    if ex.objective() != objective {
        return Err(LmError::ObjectiveMismatch);
    }
    let required = match objective {
        Objective::MaskLabelCe => AttentionMode::Masked,
        Objective::NextTokenCe => AttentionMode::Causal,
    };
    if lm.config.mode != required {
        return Err(LmError::ModeMismatch {
            expected: required,
            found: lm.config.mode,
        });
    }
    if let Target::MaskLabel {
        position,
        candidates,
        gold,
    } = &ex.target
    {
        if *position >= ex.ids.len() || *gold >= candidates.len() || candidates.len() < 2 {
            return Err(LmError::InvalidTarget("mask position, gold index or candidates out of range".into()));
        }
    }
    Ok(())
}

/// Loss of one example and, optionally, `weight * d loss / d logits`.
fn loss_from_logits(logits: &Logits, ex: &Example, weight: Option<f64>) -> (f64, Option<Array2<f64>>) {
    let mut dlogits = weight.map(|_| Array2::zeros(logits.values.raw_dim()));
    let loss = match &ex.target {
        Target::MaskLabel {
            position,
            candidates,
            gold,
        } => {
            let row = logits.token_row(*position);
            let restricted = ndarray::Array1::from_iter(candidates.iter().map(|&c| row[c]));
            let lp = log_softmax(restricted.view());
            if let (Some(d), Some(w)) = (&mut dlogits, weight) {
                let r = logits.offset + position;
                for (i, &c) in candidates.iter().enumerate() {
                    let target = if i == *gold { 1.0 } else { 0.0 };
                    d[[r, c]] += w * (lp[i].exp() - target);
                }
            }
            -lp[*gold]
        }
        Target::NextToken { start } => {
            let positions: Vec<usize> = (*start..ex.ids.len())
                .filter(|&t| logits.offset + t >= 1)
                .collect();
            if positions.is_empty() {
                return (0.0, dlogits);
            }
            let n = positions.len() as f64;
            let mut total = 0.0;
            for &t in &positions {
                let r = logits.offset + t - 1;
                let lp = log_softmax(logits.values.row(r));
                total -= lp[ex.ids[t]];
                if let (Some(d), Some(w)) = (&mut dlogits, weight) {
                    let mut drow = d.row_mut(r);
                    drow.zip_mut_with(&lp, |g, &l| *g += w / n * l.exp());
                    drow[ex.ids[t]] -= w / n;
                }
            }
            total / n
        }
    };
    (loss, dlogits)
}

/// Loss of a single example (forward only).
pub fn example_loss(lm: &LanguageModel, ex: &Example) -> Result<f64, LmError> {
    check_example(lm, ex, ex.objective())?;
    let logits = lm.forward(&ex.ids)?;
    Ok(loss_from_logits(&logits, ex, None).0)
}

/// Mean loss over a batch (forward only).
pub fn batch_loss(lm: &LanguageModel, batch: &[Example], objective: Objective) -> Result<f64, LmError> {
    if batch.is_empty() {
        return Err(LmError::EmptyBatch);
    }
    let mut total = 0.0;
    for ex in batch {
        check_example(lm, ex, objective)?;
        total += loss_from_logits(&lm.forward(&ex.ids)?, ex, None).0;
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(LmError::NonFiniteLoss);
    }
    Ok(loss)
}

/// Mean loss over `batch` and its exact gradient with respect to the groups
/// selected by `mask`. Groups outside the mask get exactly zero gradient.
pub fn loss_and_grads(
    lm: &LanguageModel,
    batch: &[Example],
    objective: Objective,
    mask: GradMask,
) -> Result<(f64, Gradients), LmError> {
    if batch.is_empty() {
        return Err(LmError::EmptyBatch);
    }
    let mut grads = Gradients::zeros_for(lm);
    let weight = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        check_example(lm, ex, objective)?;
        let (logits, cache): (Logits, ForwardCache) = lm.forward_cached(&ex.ids)?;
        let (loss, dlogits) = loss_from_logits(&logits, ex, Some(weight));
        total += loss;
        lm.backward(&cache, &dlogits.expect("weight given"), &mut grads, mask);
    }
    let loss = total * weight;
    if !loss.is_finite() {
        return Err(LmError::NonFiniteLoss);
    }
    Ok((loss, grads))
}
