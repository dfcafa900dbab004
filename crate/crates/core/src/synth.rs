//! Synthetic corpora with planted aspect preferences.
//!
//! Each user prefers a few aspects and each item is good at a few aspects.
//! A user only interacts with items that are good at something the user
//! prefers, and the review praises exactly those shared "driver" aspects
//! (plus optional noise mentions). Drivers then serve as gold labels.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ingest, AspectCatalog, CatalogPolicy, Corpus, IngestOptions, DEFAULT_SCALE};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    /// Size of each user's preferred aspect set.
    pub user_aspects: usize,
    /// Size of each item's quality aspect set.
    pub item_aspects: usize,
    /// Fraction of the user-item matrix filled with interactions.
    pub density: f64,
    /// Success probability of the geometric mention count.
    pub mention_p: f64,
    pub mention_cap: u32,
    /// Probability that a non-driver aspect gets a noise mention.
    pub noise: f64,
    /// Exponent of the Zipf-like item popularity weights; 0 is uniform.
    pub popularity: f64,
    pub seed: u64,
    pub scale: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            m: 100,
            n: 500,
            r: 20,
            user_aspects: 2,
            item_aspects: 2,
            density: 0.02,
            mention_p: 0.5,
            mention_cap: 10,
            noise: 0.0,
            popularity: 1.0,
            seed: 0,
            scale: DEFAULT_SCALE,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::Infeasible(msg));
        if self.m == 0 || self.n == 0 || self.r == 0 {
            return bad("m, n and r must be at least 1".into());
        }
        if self.user_aspects == 0 || self.user_aspects > self.r {
            return bad(format!("user_aspects must be in 1..={}", self.r));
        }
        if self.item_aspects == 0 || self.item_aspects > self.r {
            return bad(format!("item_aspects must be in 1..={}", self.r));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density {} outside (0, 1]", self.density));
        }
        if !(self.mention_p > 0.0 && self.mention_p <= 1.0) || self.mention_cap == 0 {
            return bad("mention_p must be in (0, 1] and mention_cap >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1]", self.noise));
        }
        if !self.popularity.is_finite() || self.popularity < 0.0 {
            return bad(format!("popularity {} must be >= 0", self.popularity));
        }
        if self.scale < 2 {
            return bad("scale must be at least 2".into());
        }
        Ok(())
    }

    /// Total number of interactions, `round(density * m * n)`.
    pub fn interactions(&self) -> usize {
        (self.density * self.m as f64 * self.n as f64).round() as usize
    }
}

/// Planted sets, indexed like the generated corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub preferred: Vec<Vec<usize>>,
    pub quality: Vec<Vec<usize>>,
    /// Driver aspects of every generated interaction.
    pub drivers: BTreeMap<(usize, usize), Vec<usize>>,
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().filter(|x| b.binary_search(x).is_ok()).copied().collect()
}

fn sorted_sample<R: Rng>(rng: &mut R, r: usize, size: usize) -> Vec<usize> {
    let mut v = index::sample(rng, r, size).into_vec();
    v.sort_unstable();
    v
}

fn mention_count<R: Rng>(rng: &mut R, p: f64, cap: u32) -> u32 {
    let mut c = 1;
    while c < cap && !rng.gen_bool(p) {
        c += 1;
    }
    c
}

pub fn user_id(u: usize) -> String {
    format!("u{u}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i}")
}

pub fn aspect_id(k: usize) -> String {
    format!("a{k}")
}

/// Generates a corpus and its planted truth. Deterministic in `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<(Corpus, PlantedTruth)> {
    let text = generate_text(spec)?;
    let corpus = ingest_generated(spec, text.0.as_bytes())?;
    Ok((corpus, text.1))
}

/// Parses generated interaction text with the fixed synthetic id maps.
pub fn ingest_generated(spec: &SynthSpec, text: &[u8]) -> Result<Corpus> {
    let aspects: Vec<String> = (0..spec.r).map(aspect_id).collect();
    ingest(
        text,
        IngestOptions {
            scale: spec.scale,
            catalog: CatalogPolicy::Fixed(AspectCatalog::from_ids(&aspects)?),
            users: Some((0..spec.m).map(user_id).collect()),
            items: Some((0..spec.n).map(item_id).collect()),
        },
    )
}

/// Interaction-file text plus truth.
pub fn generate_text(spec: &SynthSpec) -> Result<(String, PlantedTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let preferred: Vec<Vec<usize>> = (0..spec.m)
        .map(|_| sorted_sample(&mut rng, spec.r, spec.user_aspects))
        .collect();
    let quality: Vec<Vec<usize>> = (0..spec.n)
        .map(|_| sorted_sample(&mut rng, spec.r, spec.item_aspects))
        .collect();

    let mut order: Vec<usize> = (0..spec.n).collect();
    order.shuffle(&mut rng);
    let mut weight = vec![0.0; spec.n];
    for (pos, &j) in order.iter().enumerate() {
        weight[j] = ((pos + 1) as f64).powf(-spec.popularity);
    }

    let total = spec.interactions();
    let mut counts = vec![total / spec.m; spec.m];
    for u in index::sample(&mut rng, spec.m, total % spec.m) {
        counts[u] += 1;
    }

    let mut drivers = BTreeMap::new();
    let mut lines = Vec::with_capacity(total);
    for u in 0..spec.m {
        let compatible: Vec<usize> = (0..spec.n)
            .filter(|&j| !intersect(&preferred[u], &quality[j]).is_empty())
            .collect();
        if compatible.len() < counts[u] {
            return Err(CoreError::Infeasible(format!(
                "user {u} needs {} items but only {} share a preferred aspect",
                counts[u],
                compatible.len()
            )));
        }
        let mut chosen: Vec<usize> = compatible
            .choose_multiple_weighted(&mut rng, counts[u], |&j| weight[j])
            .map_err(|e| CoreError::Infeasible(e.to_string()))?
            .copied()
            .collect();
        chosen.sort_unstable();
        for j in chosen {
            let d = intersect(&preferred[u], &quality[j]);
            let mut mentions = Vec::new();
            for k in 0..spec.r {
                if d.binary_search(&k).is_ok() {
                    for _ in 0..mention_count(&mut rng, spec.mention_p, spec.mention_cap) {
                        let s: f64 = rng.gen_range(0.5..=1.0);
                        mentions.push(format!("{}:{s}", aspect_id(k)));
                    }
                } else if spec.noise > 0.0 && rng.gen_bool(spec.noise) {
                    let s: f64 = rng.gen_range(-1.0..=1.0);
                    mentions.push(format!("{}:{s}", aspect_id(k)));
                }
            }
            let rating = (spec.scale - 1).min(2 + d.len() as u32) + 1;
            let ts: i64 = rng.gen_range(0..1_000_000_000);
            lines.push(format!(
                "{}\t{}\t{rating}\t{ts}\t{}",
                user_id(u),
                item_id(j),
                mentions.join(",")
            ));
            drivers.insert((u, j), d);
        }
    }

    let mut text = format!("#scale={}\n", spec.scale);
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    Ok((
        text,
        PlantedTruth {
            preferred,
            quality,
            drivers,
        },
    ))
}

/// Gold aspect sets per generated pair.
pub fn oracle_explanations(truth: &PlantedTruth) -> &BTreeMap<(usize, usize), Vec<usize>> {
    &truth.drivers
}

/// Writes `user_id\titem_id\taspect,aspect,...` per generated pair.
pub fn write_truth_tsv<W: Write>(truth: &PlantedTruth, corpus: &Corpus, mut w: W) -> std::io::Result<()> {
    for (&(u, j), d) in &truth.drivers {
        let names: Vec<&str> = d.iter().map(|&k| corpus.catalog.id(k)).collect();
        writeln!(w, "{}\t{}\t{}", corpus.user_ids[u], corpus.item_ids[j], names.join(","))?;
    }
    Ok(())
}
