use super::EvalError;
use crate::corpus::Label;

/// Per-item majority over an odd number of aligned prediction lists.
pub fn majority_vote(per_epoch: &[Vec<(String, Label)>]) -> Result<Vec<(String, Label)>, EvalError> {
    if per_epoch.len().is_multiple_of(2) {
        return Err(EvalError::EvenVoterCount(per_epoch.len()));
    }
    let first = &per_epoch[0];
    for preds in &per_epoch[1..] {
        if preds.len() != first.len() || preds.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            return Err(EvalError::MisalignedPredictions);
        }
    }
    Ok(first
        .iter()
        .enumerate()
        .map(|(i, (id, _))| {
            let ad = per_epoch.iter().filter(|p| p[i].1 == Label::AD).count();
            let label = if 2 * ad > per_epoch.len() { Label::AD } else { Label::HC };
            (id.clone(), label)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    fn one(l: Label) -> Vec<(String, Label)> {
        vec![("x".into(), l)]
    }

    #[test]
    fn majority_and_unanimity() {
        assert_eq!(majority_vote(&[one(AD), one(AD), one(HC)]).unwrap(), one(AD));
        assert_eq!(majority_vote(&[one(HC), one(HC), one(HC)]).unwrap(), one(HC));
        assert_eq!(majority_vote(&[one(HC), one(AD), one(AD)]).unwrap(), one(AD));
    }

    #[test]
    fn errors() {
        assert_eq!(majority_vote(&[one(AD), one(HC)]), Err(EvalError::EvenVoterCount(2)));
        assert_eq!(majority_vote(&[]), Err(EvalError::EvenVoterCount(0)));
        let other = vec![("y".to_string(), AD)];
        assert_eq!(majority_vote(&[one(AD), one(AD), other]), Err(EvalError::MisalignedPredictions));
    }
}
