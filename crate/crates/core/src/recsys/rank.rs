use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Scorer;
use crate::corpus::AspectMatrices;
use crate::matrix::{DenseMatrix, InteractionMatrix};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item: usize,
    pub score: f64,
}

/// A user's top-K list plus the (K+1)-th item, whose score is the bar an
/// explained item has to fall below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: usize,
    pub k: usize,
    /// Top-K items, best first.
    pub items: Vec<RankedItem>,
    pub boundary: RankedItem,
}

impl RankedList {
    /// Zero-based position of `item` in the top-K, if present.
    pub fn position(&self, item: usize) -> Option<usize> {
        self.items.iter().position(|r| r.item == item)
    }

    pub fn contains(&self, item: usize) -> bool {
        self.position(item).is_some()
    }

    pub fn boundary_score(&self) -> f64 {
        self.boundary.score
    }
}

/// Descending score, then ascending item index.
pub(crate) fn rank_order(a: &RankedItem, b: &RankedItem) -> Ordering {
    b.score.total_cmp(&a.score).then(a.item.cmp(&b.item))
}

/// Scores every item the user has not interacted with in training and
/// returns them best first.
pub fn rank_candidates<S: Scorer + ?Sized>(
    user: usize,
    scorer: &S,
    matrices: &AspectMatrices,
) -> Vec<RankedItem> {
    rank_over(user, scorer, matrices.x.row(user), &matrices.y, &matrices.b)
}

/// Like [`rank_candidates`] but against an explicit item matrix, which lets
/// callers rank over a modified copy of `Y` without rebuilding the rest.
pub fn rank_over<S: Scorer + ?Sized>(
    user: usize,
    scorer: &S,
    user_vec: &[f64],
    items: &DenseMatrix,
    train: &InteractionMatrix,
) -> Vec<RankedItem> {
    let mut ranked: Vec<RankedItem> = (0..items.rows())
        .filter(|&j| !train.contains(user, j))
        .map(|j| RankedItem {
            item: j,
            score: scorer.score(user_vec, items.row(j)),
        })
        .collect();
    ranked.sort_by(rank_order);
    ranked
}

/// Top-K recommendation for `user` over all non-training items.
pub fn recommend_top_k<S: Scorer + ?Sized>(
    user: usize,
    k: usize,
    scorer: &S,
    matrices: &AspectMatrices,
) -> Result<RankedList> {
    let mut ranked = rank_candidates(user, scorer, matrices);
    if ranked.len() < k + 1 {
        return Err(CoreError::TooFewCandidates {
            user,
            available: ranked.len(),
            needed: k + 1,
        });
    }
    let boundary = ranked[k];
    ranked.truncate(k);
    Ok(RankedList {
        user,
        k,
        items: ranked,
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{DenseMatrix, InteractionMatrix};
    use crate::recsys::{ConstantScorer, LinearScorer};

    fn matrices(y: &[[f64; 2]], trained: &[usize]) -> AspectMatrices {
        let mut b = InteractionMatrix::new(1, y.len());
        for &i in trained {
            b.insert(0, i);
        }
        AspectMatrices {
            x: DenseMatrix::from_rows(&[[1.0, 1.0]]),
            y: DenseMatrix::from_rows(y),
            b,
            scale: 5,
        }
    }

    #[test]
    fn k_plus_one_candidates_drop_the_minimum() {
        let m = matrices(&[[1.0, 1.0], [3.0, 0.0], [0.5, 0.0], [2.0, 2.0]], &[]);
        let list = recommend_top_k(0, 3, &LinearScorer { r: 2 }, &m).unwrap();
        let items: Vec<usize> = list.items.iter().map(|r| r.item).collect();
        assert_eq!(items, vec![3, 1, 0]);
        assert_eq!(list.boundary, RankedItem { item: 2, score: 0.5 });
    }

    #[test]
    fn ties_resolve_by_item_index() {
        let m = matrices(&[[0.0, 0.0]; 8], &[]);
        let list = recommend_top_k(0, 5, &ConstantScorer { r: 2, value: 0.5 }, &m).unwrap();
        let items: Vec<usize> = list.items.iter().map(|r| r.item).collect();
        assert_eq!(items, vec![0, 1, 2, 3, 4]);
        assert_eq!(list.boundary.item, 5);
    }

    #[test]
    fn training_items_are_excluded() {
        let m = matrices(&[[9.0, 9.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], &[0]);
        let list = recommend_top_k(0, 2, &LinearScorer { r: 2 }, &m).unwrap();
        assert!(!list.contains(0));
        assert_eq!(list.boundary.item, 3);
    }

    #[test]
    fn too_few_candidates_is_an_error() {
        let m = matrices(&[[1.0, 1.0], [1.0, 0.0]], &[0]);
        assert!(matches!(
            recommend_top_k(0, 1, &LinearScorer { r: 2 }, &m),
            Err(CoreError::TooFewCandidates { available: 1, needed: 2, .. })
        ));
    }
}
