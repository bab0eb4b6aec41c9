use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, majority_vote, stratified_folds, EvalError, FoldPlan, MetricsReport};
use crate::classify::Prediction;
use crate::corpus::{Document, Label};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    /// Folds run concurrently on at most this many threads; `None` uses
    /// every core.
    pub threads: Option<usize>,
    /// Trailing epochs whose predictions are majority-voted.
    pub vote_epochs: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            threads: None,
            vote_epochs: 3,
        }
    }
}

/// What a fold trainer hands back: validation predictions for every epoch,
/// in validation-document order.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub epoch_predictions: Vec<Vec<Prediction>>,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub ids: Vec<String>,
    pub gold: Vec<Label>,
    pub predicted: Vec<Label>,
    /// Epochs (0-based) that took part in the vote.
    pub voted_epochs: Vec<usize>,
    pub ties: usize,
    pub accuracy: f64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub plan: FoldPlan,
    pub metrics: MetricsReport,
    pub folds: Vec<FoldReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum CvError<E> {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("fold {fold} failed: {source}")]
    Fold { fold: usize, source: E },
}

/// Number of trailing epochs voted over: at most `wanted`, odd.
pub fn vote_window(wanted: usize, epochs: usize) -> usize {
    let n = wanted.min(epochs).max(1);
    if n.is_multiple_of(2) {
        n - 1
    } else {
        n
    }
}

fn fold_report(
    fold: usize,
    val: &[Document],
    outcome: FoldOutcome,
    vote_epochs: usize,
) -> Result<FoldReport, EvalError> {
    let n_epochs = outcome.epoch_predictions.len();
    if n_epochs == 0 || outcome.epoch_predictions.iter().any(|p| p.len() != val.len()) {
        return Err(EvalError::MisalignedPredictions);
    }
    let window = vote_window(vote_epochs, n_epochs);
    let voted_epochs: Vec<usize> = (n_epochs - window..n_epochs).collect();
    let lists: Vec<Vec<(String, Label)>> = voted_epochs
        .iter()
        .map(|&e| {
            val.iter()
                .zip(&outcome.epoch_predictions[e])
                .map(|(d, p)| (d.id.clone(), p.label))
                .collect()
        })
        .collect();
    let predicted: Vec<Label> = majority_vote(&lists)?.into_iter().map(|(_, l)| l).collect();
    let ties = voted_epochs
        .iter()
        .map(|&e| outcome.epoch_predictions[e].iter().filter(|p| p.tie).count())
        .sum();
    let correct = predicted.iter().zip(val).filter(|(p, d)| **p == d.label).count();
    Ok(FoldReport {
        fold,
        ids: val.iter().map(|d| d.id.clone()).collect(),
        gold: val.iter().map(|d| d.label).collect(),
        predicted,
        voted_epochs,
        ties,
        accuracy: correct as f64 / val.len() as f64,
        train_losses: outcome.train_losses,
        val_losses: outcome.val_losses,
    })
}

/// Stratified k-fold cross-validation. `run_fold(i, train, val)` trains a
/// private model and predicts `val`; folds may run in parallel, results are
/// reduced in fold order.
pub fn cross_validate<E, F>(docs: &[Document], opts: &CvOptions, run_fold: F) -> Result<CvReport, CvError<E>>
where
    E: Send,
    F: Fn(usize, &[Document], &[Document]) -> Result<FoldOutcome, E> + Sync,
{
    let items: Vec<(String, Label)> = docs.iter().map(|d| (d.id.clone(), d.label)).collect();
    let plan = stratified_folds(&items, opts.k, opts.seed)?;
    let fold_of: HashMap<&str, usize> = plan
        .folds
        .iter()
        .enumerate()
        .flat_map(|(i, ids)| ids.iter().map(move |id| (id.as_str(), i)))
        .collect();
    let mut sorted: Vec<&Document> = docs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let job = |fold: usize| -> Result<FoldReport, CvError<E>> {
        let (val, train): (Vec<Document>, Vec<Document>) =
            sorted.iter().map(|&d| d.clone()).partition(|d| fold_of[d.id.as_str()] == fold);
        log::info!("fold {fold}: training on {} documents, validating on {}", train.len(), val.len());
        let outcome = run_fold(fold, &train, &val).map_err(|source| CvError::Fold { fold, source })?;
        Ok(fold_report(fold, &val, outcome, opts.vote_epochs)?)
    };

    let results: Vec<Result<FoldReport, CvError<E>>> = match opts.threads {
        Some(1) => (0..plan.k).map(job).collect(),
        threads => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .expect("thread pool");
            pool.install(|| (0..plan.k).into_par_iter().map(job).collect())
        }
    };
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<Vec<(Label, Label)>> = folds
        .iter()
        .map(|f| f.predicted.iter().copied().zip(f.gold.iter().copied()).collect())
        .collect();
    let metrics = compute_metrics(&pairs)?;
    Ok(CvReport { plan, metrics, folds })
}
