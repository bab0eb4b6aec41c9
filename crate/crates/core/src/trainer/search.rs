use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Hyperparams;

/// Candidate values per axis, searched in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchGrid {
    pub learning_rate: Vec<f64>,
    pub micro_batch_size: Vec<usize>,
    pub gradient_accumulation_steps: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            learning_rate: vec![1e-3, 3e-4, 1e-4],
            micro_batch_size: vec![2, 4],
            gradient_accumulation_steps: vec![1, 4],
            epochs: vec![10],
        }
    }
}

impl SearchGrid {
    pub fn single(hp: &Hyperparams) -> Self {
        Self {
            learning_rate: vec![hp.learning_rate],
            micro_batch_size: vec![hp.micro_batch_size],
            gradient_accumulation_steps: vec![hp.gradient_accumulation_steps],
            epochs: vec![hp.epochs],
        }
    }

    fn axis_len(&self, axis: usize) -> usize {
        match axis {
            0 => self.learning_rate.len(),
            1 => self.micro_batch_size.len(),
            2 => self.gradient_accumulation_steps.len(),
            _ => self.epochs.len(),
        }
    }

    fn set(&self, hp: &mut Hyperparams, axis: usize, i: usize) {
        match axis {
            0 => hp.learning_rate = self.learning_rate[i],
            1 => hp.micro_batch_size = self.micro_batch_size[i],
            2 => hp.gradient_accumulation_steps = self.gradient_accumulation_steps[i],
            _ => hp.epochs = self.epochs[i],
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError<E> {
    #[error("search grid has an empty axis")]
    EmptyGrid,
    #[error("objective failed: {0}")]
    Objective(E),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Hyperparams,
    pub best_score: f64,
    /// Every evaluated point in order.
    pub evaluations: Vec<(Hyperparams, f64)>,
}

/// Coordinate-wise search: each axis in turn is swept with the others held
/// at the current best. Ties keep the earlier value. Evaluates
/// `sum(axis sizes)` points.
pub fn greedy_search<E>(
    base: &Hyperparams,
    grid: &SearchGrid,
    mut objective: impl FnMut(&Hyperparams) -> Result<f64, E>,
) -> Result<SearchResult, SearchError<E>> {
    if (0..4).any(|axis| grid.axis_len(axis) == 0) {
        return Err(SearchError::EmptyGrid);
    }
    let mut best = base.clone();
    for axis in 0..4 {
        grid.set(&mut best, axis, 0);
    }
    let mut best_score = f64::NEG_INFINITY;
    let mut evaluations = Vec::new();
    for axis in 0..4 {
        let mut axis_best = best.clone();
        let mut axis_score = f64::NEG_INFINITY;
        for i in 0..grid.axis_len(axis) {
            let mut hp = best.clone();
            grid.set(&mut hp, axis, i);
            let score = objective(&hp).map_err(SearchError::Objective)?;
            evaluations.push((hp.clone(), score));
            if score > axis_score {
                axis_score = score;
                axis_best = hp;
            }
        }
        best = axis_best;
        best_score = axis_score;
    }
    Ok(SearchResult {
        best,
        best_score,
        evaluations,
    })
}
