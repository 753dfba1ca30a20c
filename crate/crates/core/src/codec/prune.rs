use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;

/// Indices of the `keep` highest scores in ascending index order. Ties go
/// to the lower index; `keep` above the set size keeps everything.
pub fn prune_indices(scores: &[f64], keep: usize) -> Result<Vec<usize>> {
    if keep == 0 {
        return Err(Error::InvalidArgument("keep must be positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    Ok(order)
}

/// Keeps the `keep` primitives with the highest scores, preserving order.
pub fn prune(gs: &GaussianSet, scores: &[f64], keep: usize) -> Result<GaussianSet> {
    if scores.len() != gs.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![gs.len()],
            got: vec![scores.len()],
        });
    }
    Ok(gs.select(&prune_indices(scores, keep)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_top_scores_in_order() {
        assert_eq!(prune_indices(&[3.0, 1.0, 2.0], 2).unwrap(), vec![0, 2]);
        assert_eq!(prune_indices(&[1.0, 1.0, 1.0], 2).unwrap(), vec![0, 1]);
        assert_eq!(prune_indices(&[1.0, 2.0], 5).unwrap(), vec![0, 1]);
        assert!(prune_indices(&[1.0], 0).is_err());
    }
}
