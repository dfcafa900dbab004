//! Review-derived corpus: ingestion of aspect/sentiment triplets, the
//! chronological holdout split, and the user-aspect (X), item-aspect (Y) and
//! interaction (B) matrices.
//!
//! Interaction files are UTF-8 with one tab-separated record per line:
//!
//! ```text
//! #scale=5
//! u1	i1	5	100	battery:1.0,screen:-0.5
//! ```
//!
//! The mentions column is a comma-separated list of `aspect:sentiment` with
//! sentiment in `[-1, 1]`; it may be empty. Lines starting with `#` other than
//! the scale header are ignored.
#![allow(clippy::tabs_in_doc_comments)]

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::matrix::{DenseMatrix, InteractionMatrix};

/// Number of chronologically last interactions held out per user.
pub const TEST_SIZE: usize = 5;

/// Default rating scale when the file carries no `#scale=` header.
pub const DEFAULT_SCALE: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aspect {
    pub id: String,
    pub name: String,
}

/// Ordered aspect identifiers; indices are dense in `[0, r)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AspectCatalog {
    aspects: Vec<Aspect>,
    index: HashMap<String, usize>,
}

impl AspectCatalog {
    pub fn new(aspects: Vec<Aspect>) -> Result<Self> {
        let mut index = HashMap::with_capacity(aspects.len());
        for (k, a) in aspects.iter().enumerate() {
            if index.insert(a.id.clone(), k).is_some() {
                return Err(CoreError::Parse {
                    line: k + 1,
                    message: format!("duplicate aspect `{}`", a.id),
                });
            }
        }
        Ok(Self { aspects, index })
    }

    /// Catalog whose display names equal the identifiers.
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        Self::new(
            ids.iter()
                .map(|s| Aspect {
                    id: s.as_ref().to_string(),
                    name: s.as_ref().to_string(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.aspects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aspects.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, k: usize) -> &str {
        &self.aspects[k].id
    }

    pub fn name(&self, k: usize) -> &str {
        &self.aspects[k].name
    }

    pub fn aspects(&self) -> &[Aspect] {
        &self.aspects
    }

    fn push(&mut self, id: &str) -> usize {
        let k = self.aspects.len();
        self.aspects.push(Aspect {
            id: id.to_string(),
            name: id.to_string(),
        });
        self.index.insert(id.to_string(), k);
        k
    }

    /// Reads `id[\tname]` lines; `#` lines and blank lines are skipped.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut aspects = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let first = parts.next().unwrap_or_default();
            // Index maps written by `write_tsv` carry a leading index column.
            let (id, name) = match (parts.next(), parts.next()) {
                (Some(id), Some(name)) if first.parse::<usize>().is_ok() => (id, name),
                (Some(name), None) => (first, name),
                _ => (first, first),
            };
            aspects.push(Aspect {
                id: id.to_string(),
                name: name.to_string(),
            });
        }
        Self::new(aspects)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, a) in self.aspects.iter().enumerate() {
            writeln!(w, "{k}\t{}\t{}", a.id, a.name)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub aspect: usize,
    pub sentiment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: usize,
    pub item: usize,
    pub rating: u32,
    pub timestamp: i64,
    pub mentions: Vec<Mention>,
}

/// Users, items, aspect catalog and deduplicated interaction records.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub catalog: AspectCatalog,
    /// Sorted by `(user, item)`; at most one record per pair.
    pub records: Vec<InteractionRecord>,
    pub scale: u32,
}

impl Corpus {
    pub fn m(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n(&self) -> usize {
        self.item_ids.len()
    }

    pub fn r(&self) -> usize {
        self.catalog.len()
    }

    pub fn record(&self, user: usize, item: usize) -> Option<&InteractionRecord> {
        self.records
            .binary_search_by(|rec| (rec.user, rec.item).cmp(&(user, item)))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Writes the corpus back out in the interaction-file format.
    pub fn write_interactions<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#scale={}", self.scale)?;
        for rec in &self.records {
            let mentions: Vec<String> = rec
                .mentions
                .iter()
                .map(|m| format!("{}:{}", self.catalog.id(m.aspect), m.sentiment))
                .collect();
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                self.user_ids[rec.user],
                self.item_ids[rec.item],
                rec.rating,
                rec.timestamp,
                mentions.join(",")
            )?;
        }
        Ok(())
    }
}

/// How aspect names in the file map onto catalog indices.
#[derive(Debug, Clone, Default)]
pub enum CatalogPolicy {
    /// Aspects are added in order of first appearance.
    #[default]
    Open,
    /// Only aspects of this catalog are accepted.
    Fixed(AspectCatalog),
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub scale: u32,
    pub catalog: CatalogPolicy,
    /// Fixed user index map; `None` assigns indices by first appearance.
    pub users: Option<Vec<String>>,
    /// Fixed item index map; `None` assigns indices by first appearance.
    pub items: Option<Vec<String>>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            scale: DEFAULT_SCALE,
            catalog: CatalogPolicy::Open,
            users: None,
            items: None,
        }
    }
}

struct IdMap {
    kind: &'static str,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    open: bool,
}

impl IdMap {
    fn new(kind: &'static str, fixed: Option<Vec<String>>) -> Self {
        let open = fixed.is_none();
        let ids = fixed.unwrap_or_default();
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self {
            kind,
            ids,
            index,
            open,
        }
    }

    fn resolve(&mut self, id: &str, line: usize) -> Result<usize> {
        if let Some(&i) = self.index.get(id) {
            return Ok(i);
        }
        if !self.open {
            return Err(CoreError::UnknownId {
                line,
                kind: self.kind,
                id: id.to_string(),
            });
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        Ok(i)
    }
}

/// Parses an interaction file.
pub fn ingest<R: BufRead>(reader: R, options: IngestOptions) -> Result<Corpus> {
    let mut scale = options.scale;
    let (mut catalog, catalog_open) = match options.catalog {
        CatalogPolicy::Open => (AspectCatalog::default(), true),
        CatalogPolicy::Fixed(c) => (c, false),
    };
    let mut users = IdMap::new("user", options.users);
    let mut items = IdMap::new("item", options.items);

    let mut records: Vec<InteractionRecord> = Vec::new();
    let mut by_pair: HashMap<(usize, usize), usize> = HashMap::new();
    let mut seen_record = false;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#scale=") {
            if seen_record {
                return Err(CoreError::Parse {
                    line: lineno,
                    message: "scale header after first record".into(),
                });
            }
            scale = rest.trim().parse().map_err(|_| CoreError::Parse {
                line: lineno,
                message: format!("bad scale `{rest}`"),
            })?;
            if scale < 2 {
                return Err(CoreError::Parse {
                    line: lineno,
                    message: format!("rating scale must be at least 2, got {scale}"),
                });
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        seen_record = true;

        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 && fields.len() != 5 {
            return Err(CoreError::Parse {
                line: lineno,
                message: format!("expected 5 tab-separated fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str, v: &str| CoreError::Parse {
            line: lineno,
            message: format!("bad {what} `{v}`"),
        };
        let rating: u32 = fields[2].trim().parse().map_err(|_| parse_err("rating", fields[2]))?;
        if rating < 1 || rating > scale {
            return Err(CoreError::Parse {
                line: lineno,
                message: format!("rating {rating} outside [1, {scale}]"),
            });
        }
        let timestamp: i64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err("timestamp", fields[3]))?;

        let mut mentions = Vec::new();
        let raw_mentions = fields.get(4).map(|s| s.trim()).unwrap_or_default();
        for token in raw_mentions.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (name, value) = token
                .rsplit_once(':')
                .ok_or_else(|| parse_err("mention", token))?;
            let sentiment: f64 = value.parse().map_err(|_| parse_err("sentiment", value))?;
            if !(-1.0..=1.0).contains(&sentiment) {
                return Err(CoreError::SentimentRange {
                    line: lineno,
                    value: sentiment,
                });
            }
            let aspect = match catalog.index_of(name) {
                Some(k) => k,
                None if catalog_open => catalog.push(name),
                None => {
                    return Err(CoreError::UnknownId {
                        line: lineno,
                        kind: "aspect",
                        id: name.to_string(),
                    })
                }
            };
            mentions.push(Mention { aspect, sentiment });
        }

        let user = users.resolve(fields[0].trim(), lineno)?;
        let item = items.resolve(fields[1].trim(), lineno)?;

        match by_pair.get(&(user, item)) {
            Some(&idx) => {
                let rec = &mut records[idx];
                rec.mentions.extend(mentions);
                // Later review wins the rating; equal timestamps resolve to file order.
                if timestamp >= rec.timestamp {
                    rec.rating = rating;
                    rec.timestamp = timestamp;
                }
            }
            None => {
                by_pair.insert((user, item), records.len());
                records.push(InteractionRecord {
                    user,
                    item,
                    rating,
                    timestamp,
                    mentions,
                });
            }
        }
    }

    records.sort_by_key(|r| (r.user, r.item));
    Ok(Corpus {
        user_ids: users.ids,
        item_ids: items.ids,
        catalog,
        records,
        scale,
    })
}

pub fn ingest_path(path: &Path, options: IngestOptions) -> Result<Corpus> {
    ingest(BufReader::new(File::open(path)?), options)
}

/// Writes `index\tid` lines.
pub fn write_index_map<W: Write>(ids: &[String], mut w: W) -> std::io::Result<()> {
    for (i, id) in ids.iter().enumerate() {
        writeln!(w, "{i}\t{id}")?;
    }
    Ok(())
}

/// Reads an `index\tid` map; indices must be dense and in order.
pub fn read_index_map<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (idx, id) = line.split_once('\t').ok_or_else(|| CoreError::Parse {
            line: lineno + 1,
            message: "expected `index<TAB>id`".into(),
        })?;
        if idx.parse::<usize>().ok() != Some(ids.len()) {
            return Err(CoreError::Parse {
                line: lineno + 1,
                message: format!("index `{idx}` out of sequence"),
            });
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

/// Per-user chronological holdout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    /// Training items per user, ascending by item index.
    train: Vec<Vec<usize>>,
    /// Held-out items per user in chronological order.
    test: Vec<Vec<usize>>,
    evaluable: Vec<bool>,
}

impl HoldoutSplit {
    pub fn users(&self) -> usize {
        self.train.len()
    }

    pub fn train(&self, user: usize) -> &[usize] {
        &self.train[user]
    }

    pub fn test(&self, user: usize) -> &[usize] {
        &self.test[user]
    }

    pub fn is_train(&self, user: usize, item: usize) -> bool {
        self.train[user].binary_search(&item).is_ok()
    }

    pub fn is_test(&self, user: usize, item: usize) -> bool {
        self.test[user].contains(&item)
    }

    pub fn is_evaluable(&self, user: usize) -> bool {
        self.evaluable[user]
    }

    pub fn evaluable_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.evaluable
            .iter()
            .enumerate()
            .filter_map(|(u, &e)| e.then_some(u))
    }
}

/// Holds out each user's last [`TEST_SIZE`] interactions by timestamp, ties
/// broken by ascending item index. Users with fewer than `TEST_SIZE + 1`
/// interactions keep everything in training and are not evaluable.
pub fn split(corpus: &Corpus) -> HoldoutSplit {
    let m = corpus.m();
    let mut per_user: Vec<Vec<(i64, usize)>> = vec![Vec::new(); m];
    for rec in &corpus.records {
        per_user[rec.user].push((rec.timestamp, rec.item));
    }
    let mut train = Vec::with_capacity(m);
    let mut test = Vec::with_capacity(m);
    let mut evaluable = Vec::with_capacity(m);
    for mut events in per_user {
        events.sort_unstable();
        if events.len() > TEST_SIZE {
            let cut = events.len() - TEST_SIZE;
            let mut tr: Vec<usize> = events[..cut].iter().map(|&(_, i)| i).collect();
            tr.sort_unstable();
            train.push(tr);
            test.push(events[cut..].iter().map(|&(_, i)| i).collect());
            evaluable.push(true);
        } else {
            let mut tr: Vec<usize> = events.iter().map(|&(_, i)| i).collect();
            tr.sort_unstable();
            train.push(tr);
            test.push(Vec::new());
            evaluable.push(false);
        }
    }
    HoldoutSplit {
        train,
        test,
        evaluable,
    }
}

/// Largest double strictly below `x` (for positive finite `x`).
fn below(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Smallest double strictly above `x` (for positive finite `x`).
fn above(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

/// User-aspect score for an aspect mentioned `t >= 1` times:
/// `1 + (N-1) * (2 / (1 + exp(-t)) - 1)`.
///
/// The result is kept inside the open interval `(1, N)`; for `t` beyond
/// about 36 the exact value rounds to `N` in double precision and is pinned
/// to the largest representable value below it.
pub fn user_aspect_score(t: f64, scale: u32) -> f64 {
    let n = f64::from(scale);
    let v = 1.0 + (n - 1.0) * (2.0 / (1.0 + (-t).exp()) - 1.0);
    v.clamp(above(1.0), below(n))
}

/// Item-aspect score for `t` mentions with mean sentiment `s`:
/// `1 + (N-1) / (1 + exp(-t*s))`, kept inside `(1, N)`.
pub fn item_aspect_score(t: f64, s: f64, scale: u32) -> f64 {
    let n = f64::from(scale);
    let v = 1.0 + (n - 1.0) / (1.0 + (-t * s).exp());
    v.clamp(above(1.0), below(n))
}

/// X, Y and B built from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectMatrices {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    pub b: InteractionMatrix,
    pub scale: u32,
}

impl AspectMatrices {
    pub fn r(&self) -> usize {
        self.x.cols()
    }

    pub fn users(&self) -> usize {
        self.x.rows()
    }

    pub fn items(&self) -> usize {
        self.y.rows()
    }

    /// Same matrices with `y` replaced; used for counterfactual item sets.
    pub fn with_items(&self, y: DenseMatrix) -> Self {
        Self {
            x: self.x.clone(),
            y,
            b: self.b.clone(),
            scale: self.scale,
        }
    }
}

fn training_records<'a>(
    corpus: &'a Corpus,
    split: &'a HoldoutSplit,
) -> impl Iterator<Item = &'a InteractionRecord> + 'a {
    corpus
        .records
        .iter()
        .filter(move |rec| split.is_train(rec.user, rec.item))
}

pub fn build_x(corpus: &Corpus, split: &HoldoutSplit) -> DenseMatrix {
    let r = corpus.r();
    let mut counts = vec![0u64; corpus.m() * r];
    for rec in training_records(corpus, split) {
        for m in &rec.mentions {
            counts[rec.user * r + m.aspect] += 1;
        }
    }
    let mut x = DenseMatrix::zeros(corpus.m(), r);
    for (idx, &t) in counts.iter().enumerate() {
        if t > 0 {
            x.set(idx / r, idx % r, user_aspect_score(t as f64, corpus.scale));
        }
    }
    x
}

pub fn build_y(corpus: &Corpus, split: &HoldoutSplit) -> DenseMatrix {
    let r = corpus.r();
    let mut counts = vec![0u64; corpus.n() * r];
    let mut sums = vec![0.0f64; corpus.n() * r];
    for rec in training_records(corpus, split) {
        for m in &rec.mentions {
            counts[rec.item * r + m.aspect] += 1;
            sums[rec.item * r + m.aspect] += m.sentiment;
        }
    }
    let mut y = DenseMatrix::zeros(corpus.n(), r);
    for (idx, &t) in counts.iter().enumerate() {
        if t > 0 {
            let t = t as f64;
            let mean = sums[idx] / t;
            y.set(idx / r, idx % r, item_aspect_score(t, mean, corpus.scale));
        }
    }
    y
}

pub fn build_b(corpus: &Corpus, split: &HoldoutSplit) -> InteractionMatrix {
    let mut b = InteractionMatrix::new(corpus.m(), corpus.n());
    for rec in training_records(corpus, split) {
        b.insert(rec.user, rec.item);
    }
    b
}

pub fn build_matrices(corpus: &Corpus, split: &HoldoutSplit) -> AspectMatrices {
    AspectMatrices {
        x: build_x(corpus, split),
        y: build_y(corpus, split),
        b: build_b(corpus, split),
        scale: corpus.scale,
    }
}
