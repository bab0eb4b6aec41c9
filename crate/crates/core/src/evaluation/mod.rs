//! Stratified cross-validation, majority voting and metric aggregation.

mod cv;
mod folds;
mod metrics;
mod vote;

use thiserror::Error;

pub use cv::{cross_validate, vote_window, CvError, CvOptions, CvReport, FoldOutcome, FoldReport};
pub use folds::{stratified_folds, FoldPlan};
pub use metrics::{compute_metrics, Confusion, MetricsReport, Scores};
pub use vote::majority_vote;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("cannot split {n} samples into {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("majority vote needs an odd number of voters, got {0}")]
    EvenVoterCount(usize),
    #[error("prediction lists are not aligned by id")]
    MisalignedPredictions,
    #[error("no predictions to score")]
    EmptyInput,
}
