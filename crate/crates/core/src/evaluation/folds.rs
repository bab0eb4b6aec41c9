use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Label;

/// Fold assignment of item ids. Ids within a fold are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

/// Shuffles each class with `seed`, then deals items round-robin into `k`
/// folds. The dealing position carries over from one class to the next, so
/// fold sizes differ by at most one as well.
pub fn stratified_folds(items: &[(String, Label)], k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if k < 2 || k > items.len() {
        return Err(EvalError::TooFewSamples { n: items.len(), k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for label in Label::ALL {
        let mut ids: Vec<&String> = items.iter().filter(|(_, l)| *l == label).map(|(id, _)| id).collect();
        ids.sort();
        ids.shuffle(&mut rng);
        for id in ids {
            folds[next % k].push(id.clone());
            next += 1;
        }
    }
    for fold in &mut folds {
        fold.sort();
    }
    Ok(FoldPlan { k, seed, folds })
}
