//! Scoring explanation batches: fidelity, agreement with the aspects users
//! praised in held-out reviews, and necessity/sufficiency under re-ranking.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AspectMatrices, Corpus, HoldoutSplit};
use crate::counterfactual::Explanation;
use crate::error::{CoreError, Result};
use crate::recsys::{rank_order, RankedItem, Scorer};

/// What the metrics need to know about an explanation.
pub trait AspectExplanation: Sync {
    fn user(&self) -> usize;
    fn item(&self) -> usize;
    /// One-based position in the original top-K.
    fn rank(&self) -> usize;
    /// Explanation aspects, ascending.
    fn aspects(&self) -> &[usize];
    fn is_valid(&self) -> bool;
}

impl AspectExplanation for Explanation {
    fn user(&self) -> usize {
        self.user
    }
    fn item(&self) -> usize {
        self.item
    }
    fn rank(&self) -> usize {
        self.rank
    }
    fn aspects(&self) -> &[usize] {
        &self.aspects
    }
    fn is_valid(&self) -> bool {
        self.valid
    }
}

/// Aspect set drawn uniformly at random; valid whenever it is nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomExplanation {
    pub user: usize,
    pub item: usize,
    pub rank: usize,
    pub aspects: Vec<usize>,
}

impl AspectExplanation for RandomExplanation {
    fn user(&self) -> usize {
        self.user
    }
    fn item(&self) -> usize {
        self.item
    }
    fn rank(&self) -> usize {
        self.rank
    }
    fn aspects(&self) -> &[usize] {
        &self.aspects
    }
    fn is_valid(&self) -> bool {
        !self.aspects.is_empty()
    }
}

/// Aspects each user praised in each held-out review.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pairs: BTreeMap<(usize, usize), Vec<usize>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, user: usize, item: usize, mut aspects: Vec<usize>) {
        aspects.sort_unstable();
        aspects.dedup();
        self.pairs.insert((user, item), aspects);
    }

    /// Positive aspects of a test pair; `None` if the pair is not held out.
    pub fn get(&self, user: usize, item: usize) -> Option<&[usize]> {
        self.pairs.get(&(user, item)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &[usize])> + '_ {
        self.pairs.iter().map(|(&k, v)| (k, v.as_slice()))
    }
}

/// An aspect counts as praised when the mean sentiment of its mentions in
/// the held-out review is positive.
pub fn ground_truth(corpus: &Corpus, split: &HoldoutSplit) -> GroundTruth {
    let mut truth = GroundTruth::new();
    for rec in &corpus.records {
        if !split.is_test(rec.user, rec.item) {
            continue;
        }
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for m in &rec.mentions {
            let e = sums.entry(m.aspect).or_insert((0.0, 0));
            e.0 += m.sentiment;
            e.1 += 1;
        }
        let positive = sums
            .into_iter()
            .filter(|(_, (sum, count))| sum / *count as f64 > 0.0)
            .map(|(k, _)| k)
            .collect();
        truth.insert(rec.user, rec.item, positive);
    }
    truth
}

/// Fraction of attempted explanations that are valid.
pub fn fidelity<E: AspectExplanation>(explanations: &[E]) -> Result<f64> {
    if explanations.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let valid = explanations.iter().filter(|e| e.is_valid()).count();
    Ok(valid as f64 / explanations.len() as f64)
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of one explanation against one truth set.
/// Both slices must be sorted; an empty side scores zero.
pub fn pair_score(explained: &[usize], truth: &[usize]) -> PairScore {
    let hits = explained
        .iter()
        .filter(|a| truth.binary_search(a).is_ok())
        .count() as f64;
    let ratio = |n: usize| if n == 0 { 0.0 } else { hits / n as f64 };
    let precision = ratio(explained.len());
    let recall = ratio(truth.len());
    PairScore {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

/// Means of the per-pair scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserOriented {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pairs: usize,
}

fn user_oriented_pair<E: AspectExplanation>(e: &E, truth: &GroundTruth) -> Option<PairScore> {
    if !e.is_valid() || e.aspects().is_empty() {
        return None;
    }
    let positive = truth.get(e.user(), e.item())?;
    if positive.is_empty() {
        return None;
    }
    Some(pair_score(e.aspects(), positive))
}

/// Averages over held-out pairs with a valid explanation and at least one
/// praised aspect, each pair weighted equally. `None` when no pair qualifies.
pub fn user_oriented<E: AspectExplanation>(
    explanations: &[E],
    truth: &GroundTruth,
) -> Option<UserOriented> {
    let scores: Vec<PairScore> = explanations
        .iter()
        .filter_map(|e| user_oriented_pair(e, truth))
        .collect();
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(UserOriented {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
        pairs: scores.len(),
    })
}

/// Necessity and sufficiency outcome for one explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalFlags {
    pub user: usize,
    pub item: usize,
    /// Removing the aspects everywhere ejects the item from the top-K.
    pub necessary: bool,
    /// Keeping only the aspects everywhere leaves the item in the top-K.
    pub sufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Causal {
    pub pn: f64,
    pub ps: f64,
    pub fns: f64,
    pub pairs: usize,
}

/// Harmonic mean of necessity and sufficiency; zero when both are zero.
pub fn fns(pn: f64, ps: f64) -> f64 {
    harmonic(pn, ps)
}

/// Whether `item` stays in the user's top-`k` after every candidate row is
/// rewritten by zeroing the listed columns (`keep_listed = false`) or every
/// other column (`keep_listed = true`).
///
/// The whole candidate list is rebuilt and re-sorted; rows the rewrite
/// leaves untouched reuse their original score from `base`.
#[allow(clippy::too_many_arguments)]
fn in_counterfactual_top_k<S: Scorer + ?Sized>(
    scorer: &S,
    matrices: &AspectMatrices,
    base: &[f64],
    user: usize,
    item: usize,
    aspects: &[usize],
    keep_listed: bool,
    k: usize,
) -> bool {
    let u = matrices.x.row(user);
    let mut row = vec![0.0; matrices.r()];
    let mut ranked: Vec<RankedItem> = (0..matrices.items())
        .filter(|&j| !matrices.b.contains(user, j))
        .map(|j| {
            let original = matrices.y.row(j);
            let mut changed = false;
            for (c, (slot, &v)) in row.iter_mut().zip(original).enumerate() {
                let listed = aspects.binary_search(&c).is_ok();
                *slot = if listed == keep_listed { v } else { 0.0 };
                changed |= *slot != v;
            }
            let score = if changed { scorer.score(u, &row) } else { base[j] };
            RankedItem { item: j, score }
        })
        .collect();
    ranked.sort_by(rank_order);
    ranked.iter().take(k).any(|it| it.item == item)
}

/// Re-ranks the user's full candidate list under both counterfactual item
/// matrices. Only valid, nonempty explanations are scored.
pub fn causal_flags<S: Scorer + ?Sized, E: AspectExplanation>(
    scorer: &S,
    matrices: &AspectMatrices,
    explanations: &[E],
    k: usize,
) -> Vec<CausalFlags> {
    let scored: Vec<&E> = explanations
        .iter()
        .filter(|e| e.is_valid() && !e.aspects().is_empty())
        .collect();
    let users: BTreeSet<usize> = scored.iter().map(|e| e.user()).collect();
    let base: BTreeMap<usize, Vec<f64>> = users
        .into_par_iter()
        .map(|u| {
            let x = matrices.x.row(u);
            let scores = (0..matrices.items())
                .map(|j| scorer.score(x, matrices.y.row(j)))
                .collect();
            (u, scores)
        })
        .collect();
    scored
        .par_iter()
        .map(|e| {
            let (user, item) = (e.user(), e.item());
            let stays = |keep| {
                in_counterfactual_top_k(scorer, matrices, &base[&user], user, item, e.aspects(), keep, k)
            };
            CausalFlags {
                user,
                item,
                necessary: !stays(false),
                sufficient: stays(true),
            }
        })
        .collect()
}

/// PN, PS and F_NS from per-explanation flags; `None` when there are none.
pub fn causal_summary(flags: &[CausalFlags]) -> Option<Causal> {
    if flags.is_empty() {
        return None;
    }
    let n = flags.len() as f64;
    let pn = flags.iter().filter(|f| f.necessary).count() as f64 / n;
    let ps = flags.iter().filter(|f| f.sufficient).count() as f64 / n;
    Some(Causal {
        pn,
        ps,
        fns: fns(pn, ps),
        pairs: flags.len(),
    })
}

pub fn pn_score<S: Scorer + ?Sized, E: AspectExplanation>(
    scorer: &S,
    matrices: &AspectMatrices,
    explanations: &[E],
    k: usize,
) -> Option<f64> {
    causal_summary(&causal_flags(scorer, matrices, explanations, k)).map(|c| c.pn)
}

pub fn ps_score<S: Scorer + ?Sized, E: AspectExplanation>(
    scorer: &S,
    matrices: &AspectMatrices,
    explanations: &[E],
    k: usize,
) -> Option<f64> {
    causal_summary(&causal_flags(scorer, matrices, explanations, k)).map(|c| c.ps)
}

/// A pair to draw a random explanation for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomTarget {
    pub user: usize,
    pub item: usize,
    pub rank: usize,
    pub size: usize,
}

fn pair_rng(seed: u64, user: usize, item: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(user as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(item as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Uniform aspect subsets of the requested sizes, drawn without replacement.
/// Each pair has its own stream, so picks do not depend on batch order.
pub fn random_baseline(
    targets: &[RandomTarget],
    r: usize,
    seed: u64,
) -> Result<Vec<RandomExplanation>> {
    targets
        .iter()
        .map(|t| {
            if t.size > r {
                return Err(CoreError::SampleSize {
                    size: t.size,
                    available: r,
                });
            }
            let mut rng = pair_rng(seed, t.user, t.item);
            let mut aspects = index::sample(&mut rng, r, t.size).into_vec();
            aspects.sort_unstable();
            Ok(RandomExplanation {
                user: t.user,
                item: t.item,
                rank: t.rank,
                aspects,
            })
        })
        .collect()
}

/// Targets matching each explanation's aspect count; invalid explanations
/// get size zero and therefore an empty, invalid random counterpart.
pub fn size_matched_targets(explanations: &[Explanation]) -> Vec<RandomTarget> {
    explanations
        .iter()
        .map(|e| RandomTarget {
            user: e.user,
            item: e.item,
            rank: e.rank,
            size: if e.valid { e.aspects.len() } else { 0 },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub rank: usize,
    pub count: usize,
    pub mean_complexity: f64,
    pub mean_strength: f64,
    pub mean_aspects: f64,
}

/// Means over valid explanations grouped by rank; ranks with no valid
/// explanation are omitted.
pub fn position_profile(explanations: &[Explanation]) -> Vec<PositionRow> {
    let mut groups: BTreeMap<usize, (usize, f64, f64, f64)> = BTreeMap::new();
    for e in explanations.iter().filter(|e| e.valid) {
        let g = groups.entry(e.rank).or_insert((0, 0.0, 0.0, 0.0));
        g.0 += 1;
        g.1 += e.complexity;
        g.2 += e.strength;
        g.3 += e.aspects.len() as f64;
    }
    groups
        .into_iter()
        .map(|(rank, (count, c, s, a))| {
            let n = count as f64;
            PositionRow {
                rank,
                count,
                mean_complexity: c / n,
                mean_strength: s / n,
                mean_aspects: a / n,
            }
        })
        .collect()
}

/// Per-pair row of the flat report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub user: usize,
    pub item: usize,
    pub rank: usize,
    pub valid: bool,
    pub aspects: usize,
    pub complexity: f64,
    pub strength: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub necessary: Option<bool>,
    pub sufficient: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub fidelity: f64,
    pub user_oriented: Option<UserOriented>,
    pub causal: Option<Causal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub attempted: usize,
    pub valid: usize,
    pub fidelity: f64,
    pub mean_complexity: Option<f64>,
    pub mean_strength: Option<f64>,
    pub mean_aspects: Option<f64>,
    pub user_oriented: Option<UserOriented>,
    pub causal: Option<Causal>,
    pub random: Option<Baseline>,
    pub profile: Vec<PositionRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub pairs: Vec<PairRow>,
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    /// Seed for the size-matched random baseline; `None` skips it.
    pub random_seed: Option<u64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Full report for one explanation batch. Never mutates its inputs.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    matrices: &AspectMatrices,
    truth: &GroundTruth,
    explanations: &[Explanation],
    options: EvalOptions,
) -> Result<Evaluation> {
    let fid = fidelity(explanations)?;
    let flags = causal_flags(scorer, matrices, explanations, options.k);
    let by_pair: BTreeMap<(usize, usize), CausalFlags> =
        flags.iter().map(|f| ((f.user, f.item), *f)).collect();

    let random = match options.random_seed {
        Some(seed) => {
            let picks = random_baseline(&size_matched_targets(explanations), matrices.r(), seed)?;
            let random_flags = causal_flags(scorer, matrices, &picks, options.k);
            Some(Baseline {
                fidelity: fidelity(&picks)?,
                user_oriented: user_oriented(&picks, truth),
                causal: causal_summary(&random_flags),
            })
        }
        None => None,
    };

    let valid: Vec<&Explanation> = explanations.iter().filter(|e| e.valid).collect();
    let pairs = explanations
        .iter()
        .map(|e| {
            let score = user_oriented_pair(e, truth);
            let flag = by_pair.get(&(e.user, e.item));
            PairRow {
                user: e.user,
                item: e.item,
                rank: e.rank,
                valid: e.valid,
                aspects: e.aspects.len(),
                complexity: e.complexity,
                strength: e.strength,
                precision: score.map(|s| s.precision),
                recall: score.map(|s| s.recall),
                f1: score.map(|s| s.f1),
                necessary: flag.map(|f| f.necessary),
                sufficient: flag.map(|f| f.sufficient),
            }
        })
        .collect();

    let report = EvalReport {
        k: options.k,
        attempted: explanations.len(),
        valid: valid.len(),
        fidelity: fid,
        mean_complexity: mean_of(valid.iter().map(|e| e.complexity)),
        mean_strength: mean_of(valid.iter().map(|e| e.strength)),
        mean_aspects: mean_of(valid.iter().map(|e| e.aspects.len() as f64)),
        user_oriented: user_oriented(explanations, truth),
        causal: causal_summary(&flags),
        random,
        profile: position_profile(explanations),
    };
    Ok(Evaluation { report, pairs })
}
