//! Counterfactual explanations: find a small non-positive change to a
//! recommended item's aspect vector that pushes it out of the user's top-K.
//!
//! The hard problem (minimise `||d||_2^2 + gamma ||d||_0` subject to the
//! changed item scoring at or below the (K+1)-th item) is relaxed to
//!
//! ```text
//! ||d||_2^2 + gamma ||d||_1 + lambda * max(0, alpha + s(Y_j + d) - s_{K+1})
//! ```
//!
//! and solved by proximal gradient descent over the non-positive orthant.
//! Because the relaxation gives no guarantee, every result is re-scored
//! after thresholding and only reported valid if the item really drops.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::AspectMatrices;
use crate::error::{CoreError, Result};
use crate::recsys::{RankedList, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Multi,
    Single,
    MaskedMulti,
    MaskedSingle,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Multi,
        Variant::Single,
        Variant::MaskedMulti,
        Variant::MaskedSingle,
    ];

    pub fn is_single(self) -> bool {
        matches!(self, Variant::Single | Variant::MaskedSingle)
    }

    pub fn is_masked(self) -> bool {
        matches!(self, Variant::MaskedMulti | Variant::MaskedSingle)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Multi => "multi",
            Variant::Single => "single",
            Variant::MaskedMulti => "masked-multi",
            Variant::MaskedSingle => "masked-single",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Hyperparameters of the relaxed optimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfHyper {
    /// Weight of the hinge term.
    pub lambda: f64,
    /// Weight of the sparsity term (l1 during search, l0 in reported complexity).
    pub gamma: f64,
    /// Hinge margin on the score.
    pub alpha: f64,
    /// Entries with `|d| <= tau` count as zero.
    pub tau: f64,
    pub step: f64,
    pub max_iter: usize,
    /// Stop once no coordinate moves by more than this in one step.
    pub tol: f64,
    /// Iterations over which the sparsity weight ramps linearly from zero to
    /// `gamma`; 0 applies the full weight from the first step.
    pub warmup: usize,
}

impl Default for CfHyper {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            gamma: 1.0,
            alpha: 0.2,
            tau: 1e-4,
            step: 0.01,
            max_iter: 1000,
            tol: 1e-6,
            warmup: 500,
        }
    }
}

impl CfHyper {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("tau", self.tau),
            ("step", self.step),
            ("tol", self.tol),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::NonFinite(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A non-positive change to an item's aspect vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeVector {
    delta: Vec<f64>,
    tau: f64,
}

impl ChangeVector {
    /// Panics if any entry is positive.
    pub fn new(delta: Vec<f64>, tau: f64) -> Self {
        assert!(delta.iter().all(|&d| d <= 0.0), "change vector must be <= 0");
        Self { delta, tau }
    }

    pub fn values(&self) -> &[f64] {
        &self.delta
    }

    /// Indices with `|d| > tau`.
    pub fn support(&self) -> Vec<usize> {
        support(&self.delta, self.tau)
    }

    pub fn l0(&self) -> usize {
        self.support().len()
    }

    /// Copy with every entry at or below the threshold set to exactly zero.
    pub fn thresholded(&self) -> Self {
        Self {
            delta: threshold(&self.delta, self.tau),
            tau: self.tau,
        }
    }
}

fn support(delta: &[f64], tau: f64) -> Vec<usize> {
    delta
        .iter()
        .enumerate()
        .filter_map(|(k, d)| (d.abs() > tau).then_some(k))
        .collect()
}

fn threshold(delta: &[f64], tau: f64) -> Vec<f64> {
    delta
        .iter()
        .map(|&d| if d.abs() > tau { d } else { 0.0 })
        .collect()
}

/// `||d||_2^2 + gamma * ||d||_0`, counting entries with `|d| <= tau` as zero.
pub fn complexity(delta: &[f64], gamma: f64, tau: f64) -> f64 {
    let l2: f64 = delta.iter().map(|d| d * d).sum();
    l2 + gamma * support(delta, tau).len() as f64
}

fn shifted(item: &[f64], delta: &[f64]) -> Vec<f64> {
    item.iter().zip(delta).map(|(y, d)| y + d).collect()
}

/// Drop in the ranking score of `item` for `user` when `delta` is applied.
pub fn strength<S: Scorer + ?Sized>(
    scorer: &S,
    matrices: &AspectMatrices,
    user: usize,
    item: usize,
    delta: &[f64],
) -> f64 {
    let u = matrices.x.row(user);
    let y = matrices.y.row(item);
    scorer.score(u, y) - scorer.score(u, &shifted(y, delta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    /// `s_ij - s_{K+1}`.
    pub epsilon: f64,
    /// The item ties the boundary score.
    pub degenerate: bool,
}

/// Score gap between a listed item and the (K+1)-th item.
pub fn margin(list: &RankedList, item: usize) -> Result<Margin> {
    let pos = list.position(item).ok_or(CoreError::NotRecommended {
        user: list.user,
        item,
        k: list.k,
    })?;
    let epsilon = list.items[pos].score - list.boundary.score;
    Ok(Margin {
        epsilon,
        degenerate: epsilon <= 0.0,
    })
}

/// One explained (user, item) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub user: usize,
    pub item: usize,
    /// One-based position of the item in the original top-K.
    pub rank: usize,
    pub variant: Variant,
    /// Aspects with a non-zero change, ascending.
    pub aspects: Vec<usize>,
    /// Thresholded change vector.
    pub delta: Vec<f64>,
    pub complexity: f64,
    pub strength: f64,
    pub epsilon: f64,
    pub degenerate: bool,
    pub valid: bool,
    /// Original score `s_ij`.
    pub score: f64,
    /// Score after applying `delta`.
    pub counterfactual_score: f64,
    pub boundary_score: f64,
}

impl Explanation {
    pub fn change_vector(&self, tau: f64) -> ChangeVector {
        ChangeVector::new(self.delta.clone(), tau)
    }
}

/// Indicator of the aspects the user has mentioned in training (`X_ik != 0`).
pub fn user_mask(matrices: &AspectMatrices, user: usize) -> Vec<bool> {
    matrices.x.row(user).iter().map(|&v| v != 0.0).collect()
}

/// Proximal gradient descent for the relaxed objective restricted to the
/// coordinates in `active`; all other coordinates stay at zero.
struct Relaxation<'a, S: ?Sized> {
    scorer: &'a S,
    user: &'a [f64],
    item: &'a [f64],
    boundary: f64,
    active: &'a [bool],
    /// Weight of the l1 term (zero for the single-aspect search).
    l1: f64,
    hyper: &'a CfHyper,
}

impl<S: Scorer + ?Sized> Relaxation<'_, S> {
    fn objective(&self, delta: &[f64], score: f64) -> f64 {
        let l2: f64 = delta.iter().map(|d| d * d).sum();
        let l1: f64 = delta.iter().map(|d| d.abs()).sum();
        let hinge = (self.hyper.alpha + score - self.boundary).max(0.0);
        l2 + self.l1 * l1 + self.hyper.lambda * hinge
    }

    /// Runs from `d = 0` and returns the iterate with the lowest objective.
    ///
    /// The hinge makes the objective non-smooth, so fixed-step iterates
    /// oscillate around the kink instead of settling; the best iterate seen
    /// is the one reported.
    fn solve(&self) -> Result<Vec<f64>> {
        let r = self.item.len();
        let h = self.hyper;
        let mut delta = vec![0.0; r];
        let mut grad = vec![0.0; r];
        let mut best = delta.clone();
        let mut best_value = f64::INFINITY;

        for iter in 0..=h.max_iter {
            let point = shifted(self.item, &delta);
            let score = self.scorer.score_and_item_grad(self.user, &point, &mut grad);
            let value = self.objective(&delta, score);
            if !score.is_finite() || !value.is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "relaxed objective at iteration {iter}"
                )));
            }
            if value < best_value {
                best_value = value;
                best.copy_from_slice(&delta);
            }
            if iter == h.max_iter {
                break;
            }
            let hinge_active = h.alpha + score - self.boundary > 0.0;
            // Ramping the l1 weight lets d leave the origin when every
            // hinge gradient is below gamma there (saturated scores).
            let l1 = if iter < h.warmup {
                self.l1 * iter as f64 / h.warmup as f64
            } else {
                self.l1
            };
            let mut moved = 0.0f64;
            for k in 0..r {
                if !self.active[k] {
                    continue;
                }
                let mut g = 2.0 * delta[k];
                if hinge_active {
                    g += h.lambda * grad[k];
                }
                // Soft-threshold for l1 followed by projection onto d <= 0:
                // on the non-positive half-line gamma|d| = -gamma d.
                let next = (delta[k] - h.step * g + h.step * l1).min(0.0);
                moved = moved.max((next - delta[k]).abs());
                delta[k] = next;
            }
            if iter >= h.warmup && moved < h.tol {
                let point = shifted(self.item, &delta);
                let value = self.objective(&delta, self.scorer.score(self.user, &point));
                if value < best_value {
                    best.copy_from_slice(&delta);
                }
                break;
            }
        }
        Ok(best)
    }
}

/// Thresholds a raw solution and re-scores it independently of the optimiser.
struct Verdict {
    delta: Vec<f64>,
    aspects: Vec<usize>,
    counterfactual_score: f64,
    valid: bool,
}

fn verify<S: Scorer + ?Sized>(
    scorer: &S,
    user: &[f64],
    item: &[f64],
    raw: &[f64],
    tau: f64,
    boundary: f64,
) -> Verdict {
    let delta = threshold(raw, tau);
    let aspects = support(&delta, tau);
    let counterfactual_score = scorer.score(user, &shifted(item, &delta));
    let valid = !aspects.is_empty() && counterfactual_score <= boundary;
    Verdict {
        delta,
        aspects,
        counterfactual_score,
        valid,
    }
}

/// Explains why `item` is in `list` using the requested variant.
pub fn explain<S: Scorer + ?Sized>(
    scorer: &S,
    matrices: &AspectMatrices,
    list: &RankedList,
    item: usize,
    hyper: &CfHyper,
    variant: Variant,
) -> Result<Explanation> {
    hyper.validate()?;
    let r = matrices.r();
    if scorer.aspects() != r {
        return Err(CoreError::Dimension {
            expected: r,
            got: scorer.aspects(),
        });
    }
    let m = margin(list, item)?;
    let rank = list.position(item).map_or(0, |p| p + 1);
    let user = list.user;
    let u = matrices.x.row(user);
    let y = matrices.y.row(item);
    let boundary = list.boundary.score;
    let score = scorer.score(u, y);

    let allowed: Vec<bool> = if variant.is_masked() {
        user_mask(matrices, user)
    } else {
        vec![true; r]
    };

    let verdict = if variant.is_single() {
        explain_single_verdict(scorer, u, y, boundary, &allowed, hyper)?
    } else if allowed.iter().any(|&a| a) {
        let raw = Relaxation {
            scorer,
            user: u,
            item: y,
            boundary,
            active: &allowed,
            l1: hyper.gamma,
            hyper,
        }
        .solve()?;
        verify(scorer, u, y, &raw, hyper.tau, boundary)
    } else {
        verify(scorer, u, y, &vec![0.0; r], hyper.tau, boundary)
    };

    Ok(Explanation {
        user,
        item,
        rank,
        variant,
        complexity: complexity(&verdict.delta, hyper.gamma, hyper.tau),
        strength: score - verdict.counterfactual_score,
        aspects: verdict.aspects,
        delta: verdict.delta,
        epsilon: m.epsilon,
        degenerate: m.degenerate,
        valid: verdict.valid,
        score,
        counterfactual_score: verdict.counterfactual_score,
        boundary_score: boundary,
    })
}

/// Single-aspect search: each aspect the item has a value on is optimised
/// alone (no l1 term), and the valid candidate with the smallest change wins.
/// When none flips the decision the strongest attempt is returned, invalid.
fn explain_single_verdict<S: Scorer + ?Sized>(
    scorer: &S,
    u: &[f64],
    y: &[f64],
    boundary: f64,
    allowed: &[bool],
    hyper: &CfHyper,
) -> Result<Verdict> {
    let r = y.len();
    let mut best_valid: Option<(f64, Verdict)> = None;
    let mut strongest: Option<Verdict> = None;
    let mut active = vec![false; r];
    for k in (0..r).filter(|&k| allowed[k] && y[k] != 0.0) {
        active.fill(false);
        active[k] = true;
        let raw = Relaxation {
            scorer,
            user: u,
            item: y,
            boundary,
            active: &active,
            l1: 0.0,
            hyper,
        }
        .solve()?;
        let v = verify(scorer, u, y, &raw, hyper.tau, boundary);
        if v.valid {
            let size = v.delta[k] * v.delta[k];
            if best_valid.as_ref().is_none_or(|(s, _)| size < *s) {
                best_valid = Some((size, v));
            }
        } else if strongest
            .as_ref()
            .is_none_or(|s| v.counterfactual_score < s.counterfactual_score)
        {
            strongest = Some(v);
        }
    }
    Ok(match (best_valid, strongest) {
        (Some((_, v)), _) => v,
        (None, Some(v)) => v,
        (None, None) => verify(scorer, u, y, &vec![0.0; r], hyper.tau, boundary),
    })
}

pub fn explain_multi<S: Scorer + ?Sized>(
    scorer: &S,
    matrices: &AspectMatrices,
    list: &RankedList,
    item: usize,
    hyper: &CfHyper,
) -> Result<Explanation> {
    explain(scorer, matrices, list, item, hyper, Variant::Multi)
}

pub fn explain_single<S: Scorer + ?Sized>(
    scorer: &S,
    matrices: &AspectMatrices,
    list: &RankedList,
    item: usize,
    hyper: &CfHyper,
) -> Result<Explanation> {
    explain(scorer, matrices, list, item, hyper, Variant::Single)
}

/// Multi- or single-aspect search restricted to the user's mentioned aspects.
pub fn explain_masked<S: Scorer + ?Sized>(
    scorer: &S,
    matrices: &AspectMatrices,
    list: &RankedList,
    item: usize,
    hyper: &CfHyper,
    single: bool,
) -> Result<Explanation> {
    let variant = if single {
        Variant::MaskedSingle
    } else {
        Variant::MaskedMulti
    };
    explain(scorer, matrices, list, item, hyper, variant)
}

/// Explains every item of every list; output order follows the input.
pub fn explain_lists<S: Scorer + ?Sized>(
    scorer: &S,
    matrices: &AspectMatrices,
    lists: &[RankedList],
    hyper: &CfHyper,
    variant: Variant,
) -> Result<Vec<Explanation>> {
    let jobs: Vec<(&RankedList, usize)> = lists
        .iter()
        .flat_map(|l| l.items.iter().map(move |it| (l, it.item)))
        .collect();
    jobs.par_iter()
        .map(|&(list, item)| explain(scorer, matrices, list, item, hyper, variant))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{DenseMatrix, InteractionMatrix};
    use crate::recsys::{recommend_top_k, ConstantScorer, LinearScorer, RankedItem};

    fn list(scores: &[f64], boundary: f64) -> RankedList {
        RankedList {
            user: 0,
            k: scores.len(),
            items: scores
                .iter()
                .enumerate()
                .map(|(item, &score)| RankedItem { item, score })
                .collect(),
            boundary: RankedItem {
                item: scores.len(),
                score: boundary,
            },
        }
    }

    #[test]
    fn complexity_values() {
        assert_eq!(complexity(&[0.0; 3], 1.0, 0.0), 0.0);
        assert_eq!(complexity(&[-1.0, 0.0, -0.5], 1.0, 0.0), 3.25);
        assert_eq!(complexity(&[-1.0, 0.0, -0.5], 0.0, 0.0), 1.25);
        // Below-threshold entries do not count towards ||d||_0.
        assert!((complexity(&[-1.0, -1e-6], 1.0, 1e-4) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn margin_values() {
        let l = list(&[0.9, 0.8, 0.7], 0.7);
        let m = margin(&l, 0).unwrap();
        assert!((m.epsilon - 0.2).abs() < 1e-12);
        assert!(!m.degenerate);
        let tie = margin(&l, 2).unwrap();
        assert_eq!(tie.epsilon, 0.0);
        assert!(tie.degenerate);
        assert!(margin(&l, 0).unwrap().epsilon >= margin(&l, 2).unwrap().epsilon);
        assert!(matches!(
            margin(&l, 42),
            Err(CoreError::NotRecommended { item: 42, .. })
        ));
    }

    #[test]
    fn change_vector_support_and_threshold() {
        let cv = ChangeVector::new(vec![-0.5, -1e-5, 0.0, -2.0], 1e-4);
        assert_eq!(cv.support(), vec![0, 3]);
        assert_eq!(cv.l0(), 2);
        assert_eq!(cv.thresholded().values(), &[-0.5, 0.0, 0.0, -2.0]);
    }

    #[test]
    #[should_panic]
    fn change_vector_rejects_positive_entries() {
        ChangeVector::new(vec![0.1], 0.0);
    }

    fn two_item(user: [f64; 3], a: [f64; 3], b: [f64; 3]) -> AspectMatrices {
        AspectMatrices {
            x: DenseMatrix::from_rows(&[user]),
            y: DenseMatrix::from_rows(&[a, b]),
            b: InteractionMatrix::new(1, 2),
            scale: 5,
        }
    }

    #[test]
    fn zero_lambda_keeps_origin() {
        let m = two_item([4.0, 5.0, 3.0], [4.5, 3.0, 3.0], [4.5, 2.1, 3.0]);
        let scorer = LinearScorer { r: 3 };
        let l = recommend_top_k(0, 1, &scorer, &m).unwrap();
        let hyper = CfHyper {
            lambda: 0.0,
            ..Default::default()
        };
        let e = explain_multi(&scorer, &m, &l, 0, &hyper).unwrap();
        assert_eq!(e.delta, vec![0.0; 3]);
        assert!(!e.valid);
        assert!(e.aspects.is_empty());
    }

    #[test]
    fn constant_model_never_flips() {
        let m = two_item([4.0, 5.0, 3.0], [4.5, 3.0, 3.0], [4.5, 2.1, 3.0]);
        let scorer = ConstantScorer { r: 3, value: 0.5 };
        let l = list(&[0.6], 0.5);
        for variant in Variant::ALL {
            let e = explain(&scorer, &m, &l, 0, &CfHyper::default(), variant).unwrap();
            assert!(!e.valid, "{variant}");
        }
    }

    #[test]
    fn empty_mask_is_invalid_immediately() {
        let m = two_item([0.0, 0.0, 0.0], [4.5, 3.0, 3.0], [4.5, 2.1, 3.0]);
        let scorer = LinearScorer { r: 3 };
        let l = list(&[1.0], 0.5);
        for single in [false, true] {
            let e = explain_masked(&scorer, &m, &l, 0, &CfHyper::default(), single).unwrap();
            assert!(!e.valid);
            assert_eq!(e.delta, vec![0.0; 3]);
        }
    }

    #[test]
    fn masked_variant_stays_inside_mask() {
        // User never mentioned battery (index 1).
        let m = two_item([4.0, 0.0, 3.0], [4.5, 3.0, 3.0], [4.5, 3.0, 0.5]);
        let scorer = LinearScorer { r: 3 };
        let l = recommend_top_k(0, 1, &scorer, &m).unwrap();
        for single in [false, true] {
            let e = explain_masked(&scorer, &m, &l, 0, &CfHyper::default(), single).unwrap();
            assert!(!e.aspects.contains(&1));
            assert_eq!(e.delta[1], 0.0);
        }
    }

    #[test]
    fn all_ones_mask_matches_unmasked() {
        let m = two_item([4.0, 5.0, 3.0], [4.5, 3.0, 3.0], [4.5, 2.1, 3.0]);
        let scorer = LinearScorer { r: 3 };
        let l = recommend_top_k(0, 1, &scorer, &m).unwrap();
        let hyper = CfHyper {
            gamma: 10.0,
            ..Default::default()
        };
        let a = explain_multi(&scorer, &m, &l, 0, &hyper).unwrap();
        let b = explain_masked(&scorer, &m, &l, 0, &hyper, false).unwrap();
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.valid, b.valid);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let m = two_item([4.0, 5.0, 3.0], [4.5, 3.0, 3.0], [4.5, 2.1, 3.0]);
        let scorer = ConstantScorer {
            r: 3,
            value: f64::NAN,
        };
        let l = list(&[1.0], 0.5);
        assert!(matches!(
            explain_multi(&scorer, &m, &l, 0, &CfHyper::default()),
            Err(CoreError::NonFinite(_))
        ));
    }

    #[test]
    fn strength_of_zero_change_is_zero() {
        let m = two_item([4.0, 5.0, 3.0], [4.5, 3.0, 3.0], [4.5, 2.1, 3.0]);
        assert_eq!(strength(&LinearScorer { r: 3 }, &m, 0, 0, &[0.0; 3]), 0.0);
        let s = strength(&LinearScorer { r: 3 }, &m, 0, 0, &[0.0, -1.0, 0.0]);
        assert!((s - 5.0).abs() < 1e-12);
    }

    #[test]
    fn negative_hyper_is_rejected() {
        let h = CfHyper {
            alpha: -0.1,
            ..Default::default()
        };
        assert!(h.validate().is_err());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("both".parse::<Variant>().is_err());
    }
}
