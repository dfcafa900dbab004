//! The black-box recommender: a concatenation-input scoring network, its
//! training loop, top-K ranking and checkpoint format.

mod checkpoint;
mod model;
mod rank;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{Dense, RecommenderModel, TrainHyper, HIDDEN};
pub(crate) use rank::rank_order;
pub use rank::{rank_candidates, rank_over, recommend_top_k, RankedItem, RankedList};
pub use train::{train, TrainedModel};

/// A differentiable ranking function over user and item aspect vectors.
///
/// Explanations only need scores and the gradient with respect to the item
/// vector, so any model exposing these can be explained.
pub trait Scorer: Sync {
    /// Number of aspects `r` the scorer expects.
    fn aspects(&self) -> usize;

    fn score(&self, user: &[f64], item: &[f64]) -> f64;

    /// Writes `d score / d item` into `grad` and returns the score.
    fn score_and_item_grad(&self, user: &[f64], item: &[f64], grad: &mut [f64]) -> f64;
}

/// `s = sum_k user_k * item_k`. Handy for hand-checkable toy instances.
#[derive(Debug, Clone, Copy)]
pub struct LinearScorer {
    pub r: usize,
}

impl Scorer for LinearScorer {
    fn aspects(&self) -> usize {
        self.r
    }

    fn score(&self, user: &[f64], item: &[f64]) -> f64 {
        user.iter().zip(item).map(|(u, v)| u * v).sum()
    }

    fn score_and_item_grad(&self, user: &[f64], item: &[f64], grad: &mut [f64]) -> f64 {
        grad.copy_from_slice(user);
        self.score(user, item)
    }
}

/// A scorer that ignores its inputs.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer {
    pub r: usize,
    pub value: f64,
}

impl Scorer for ConstantScorer {
    fn aspects(&self) -> usize {
        self.r
    }

    fn score(&self, _user: &[f64], _item: &[f64]) -> f64 {
        self.value
    }

    fn score_and_item_grad(&self, _user: &[f64], _item: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        self.value
    }
}
