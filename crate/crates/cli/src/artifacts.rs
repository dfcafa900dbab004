//! On-disk stage artifacts. Every file starts with (or, for line records,
//! contains) the hash of the stage that produced it, and each stage hash
//! chains the hash of its input stage with the settings it used.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use counter_core::corpus::{
    ingest, read_index_map, write_index_map, AspectCatalog, CatalogPolicy, Corpus, IngestOptions,
};
use counter_core::counterfactual::{Explanation, Variant};
use counter_core::recsys::{read_checkpoint, write_checkpoint, RankedItem, RankedList, RecommenderModel};
use serde::{Deserialize, Serialize};

use crate::config::{digest, RunConfig};
use crate::error::{io_error, CliError};

pub const STAMP_PREFIX: &str = "# config_hash=";

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }
    pub fn interactions(&self) -> PathBuf {
        self.root.join("corpus").join("interactions.tsv")
    }
    pub fn aspects(&self) -> PathBuf {
        self.root.join("corpus").join("aspects.tsv")
    }
    pub fn users(&self) -> PathBuf {
        self.root.join("corpus").join("users.tsv")
    }
    pub fn items(&self) -> PathBuf {
        self.root.join("corpus").join("items.tsv")
    }
    pub fn synth_interactions(&self) -> PathBuf {
        self.root.join("synth").join("interactions.tsv")
    }
    pub fn synth_truth(&self) -> PathBuf {
        self.root.join("synth").join("truth.tsv")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model").join("model.ckpt")
    }
    pub fn loss(&self) -> PathBuf {
        self.root.join("model").join("loss.csv")
    }
    pub fn rankings(&self) -> PathBuf {
        self.root.join("rankings.tsv")
    }
    pub fn explanations(&self) -> PathBuf {
        self.root.join("explanations.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs.csv")
    }
    pub fn profile(&self) -> PathBuf {
        self.root.join("profile.csv")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// Hashes of the pipeline stages, each derived from its predecessor.
pub mod stage {
    use super::*;

    pub fn corpus(interactions: &[u8], aspects: &[u8], scale: u32) -> String {
        digest(&[b"corpus", interactions, aspects, scale.to_string().as_bytes()])
    }

    pub fn model(corpus: &str, cfg: &RunConfig) -> String {
        let keys = ["learning_rate", "epochs", "batch_size", "negative_ratio", "seed"];
        keyed(b"model", corpus, cfg, &keys)
    }

    pub fn rankings(model: &str, cfg: &RunConfig) -> String {
        keyed(b"rankings", model, cfg, &["k"])
    }

    pub fn explanations(rankings: &str, cfg: &RunConfig) -> String {
        let keys = ["lambda", "gamma", "alpha", "tau", "step", "max_iter", "tol", "warmup", "variants"];
        keyed(b"explanations", rankings, cfg, &keys)
    }

    pub fn report(explanations: &str, cfg: &RunConfig) -> String {
        keyed(b"report", explanations, cfg, &["random_seed"])
    }

    pub fn sweep(rankings: &str, cfg: &RunConfig) -> String {
        let keys = [
            "lambda_grid",
            "gamma",
            "alpha",
            "tau",
            "step",
            "max_iter",
            "tol",
            "warmup",
            "variants",
            "random_seed",
        ];
        keyed(b"sweep", rankings, cfg, &keys)
    }

    fn keyed(tag: &[u8], parent: &str, cfg: &RunConfig, keys: &[&str]) -> String {
        let mut text = String::new();
        for k in keys {
            text.push_str(&format!("{k}={}\n", cfg.get(k).unwrap_or_default()));
        }
        digest(&[tag, parent.as_bytes(), text.as_bytes()])
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Input(format!("missing prerequisite file {}", path.display()))
        } else {
            io_error(path, e)
        }
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(bytes).map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut open(path)?, &mut bytes).map_err(|e| io_error(path, e))?;
    Ok(bytes)
}

fn stamped(hash: &str, body: &[u8]) -> Vec<u8> {
    let mut out = format!("{STAMP_PREFIX}{hash}\n").into_bytes();
    out.extend_from_slice(body);
    out
}

/// Hash from the first line of a stamped file.
pub fn read_stamp(path: &Path) -> Result<String, CliError> {
    let mut first = String::new();
    open(path)?
        .read_line(&mut first)
        .map_err(|e| io_error(path, e))?;
    first
        .trim_end()
        .strip_prefix(STAMP_PREFIX)
        .map(str::to_string)
        .ok_or_else(|| CliError::Input(format!("{} carries no config hash", path.display())))
}

/// Rejects an artifact whose hash differs from the one the current
/// configuration expects.
pub fn check_hash(path: &Path, found: &str, expected: &str) -> Result<(), CliError> {
    if found == expected {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{} was produced by a different configuration (hash {found}, expected {expected}); rerun the stage that writes it",
            path.display()
        )))
    }
}

/// Writes the normalised corpus and returns its stage hash.
pub fn write_corpus(layout: &Layout, corpus: &Corpus) -> Result<String, CliError> {
    let mut interactions = Vec::new();
    corpus
        .write_interactions(&mut interactions)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let mut aspects = Vec::new();
    corpus
        .catalog
        .write_tsv(&mut aspects)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let mut users = Vec::new();
    let mut items = Vec::new();
    write_index_map(&corpus.user_ids, &mut users).map_err(|e| CliError::Internal(e.to_string()))?;
    write_index_map(&corpus.item_ids, &mut items).map_err(|e| CliError::Internal(e.to_string()))?;
    let hash = digest(&[
        stage::corpus(&interactions, &aspects, corpus.scale).as_bytes(),
        &users,
        &items,
    ]);
    write_file(&layout.interactions(), &stamped(&hash, &interactions))?;
    write_file(&layout.aspects(), &stamped(&hash, &aspects))?;
    write_file(&layout.users(), &stamped(&hash, &users))?;
    write_file(&layout.items(), &stamped(&hash, &items))?;
    Ok(hash)
}

/// Loads the normalised corpus and its hash; all four files must agree.
pub fn read_corpus(layout: &Layout, scale: u32) -> Result<(Corpus, String), CliError> {
    let hash = read_stamp(&layout.interactions())?;
    for p in [layout.aspects(), layout.users(), layout.items()] {
        check_hash(&p, &read_stamp(&p)?, &hash)?;
    }
    let catalog = AspectCatalog::read_tsv(open(&layout.aspects())?)?;
    let users = read_index_map(open(&layout.users())?)?;
    let items = read_index_map(open(&layout.items())?)?;
    let corpus = ingest(
        open(&layout.interactions())?,
        IngestOptions {
            scale,
            catalog: CatalogPolicy::Fixed(catalog),
            users: Some(users),
            items: Some(items),
        },
    )?;
    Ok((corpus, hash))
}

pub fn write_model(
    layout: &Layout,
    model: &RecommenderModel,
    loss: &[f64],
    hash: &str,
) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    write_checkpoint(model, Some(hash), &mut bytes).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&layout.model(), &bytes)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Internal(e.to_string());
    w.write_record(["epoch", "loss", "config_hash"]).map_err(csv_err)?;
    for (epoch, l) in loss.iter().enumerate() {
        w.write_record([(epoch + 1).to_string(), l.to_string(), hash.to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&layout.loss(), &bytes)
}

pub fn read_model(layout: &Layout) -> Result<(RecommenderModel, String), CliError> {
    let path = layout.model();
    let (model, hash) = read_checkpoint(open(&path)?)?;
    let hash = hash.ok_or_else(|| CliError::Input(format!("{} carries no config hash", path.display())))?;
    Ok((model, hash))
}

/// `user_id user rank item_id item score`; rank `K+1` is the boundary item.
pub fn write_rankings(
    layout: &Layout,
    corpus: &Corpus,
    lists: &[RankedList],
    hash: &str,
) -> Result<(), CliError> {
    let mut body = String::from("user_id\tuser\trank\titem_id\titem\tscore\n");
    for l in lists {
        for (pos, it) in l.items.iter().chain(std::iter::once(&l.boundary)).enumerate() {
            body.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                corpus.user_ids[l.user],
                l.user,
                pos + 1,
                corpus.item_ids[it.item],
                it.item,
                it.score
            ));
        }
    }
    write_file(&layout.rankings(), &stamped(hash, body.as_bytes()))
}

pub fn read_rankings(layout: &Layout, k: usize) -> Result<(Vec<RankedList>, String), CliError> {
    let path = layout.rankings();
    let hash = read_stamp(&path)?;
    let bad = |line: usize, msg: &str| {
        CliError::Input(format!("{} line {line}: {msg}", path.display()))
    };
    let mut lists: Vec<RankedList> = Vec::new();
    let mut pending: Vec<RankedItem> = Vec::new();
    for (no, line) in open(&path)?.lines().enumerate().skip(2) {
        let line = line.map_err(|e| io_error(&path, e))?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(no + 1, "expected 6 columns"));
        }
        let user: usize = f[1].parse().map_err(|_| bad(no + 1, "bad user index"))?;
        let rank: usize = f[2].parse().map_err(|_| bad(no + 1, "bad rank"))?;
        let item: usize = f[4].parse().map_err(|_| bad(no + 1, "bad item index"))?;
        let score: f64 = f[5].parse().map_err(|_| bad(no + 1, "bad score"))?;
        if rank != pending.len() + 1 {
            return Err(bad(no + 1, "ranks out of sequence"));
        }
        pending.push(RankedItem { item, score });
        if rank == k + 1 {
            let boundary = pending.pop().expect("nonempty");
            lists.push(RankedList {
                user,
                k,
                items: std::mem::take(&mut pending),
                boundary,
            });
        }
    }
    if !pending.is_empty() {
        return Err(CliError::Input(format!(
            "{}: truncated list (k = {k})",
            path.display()
        )));
    }
    Ok((lists, hash))
}

/// One line of `explanations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub config_hash: String,
    pub user_id: String,
    pub item_id: String,
    pub user: usize,
    pub item: usize,
    pub rank: usize,
    pub variant: Variant,
    pub aspects: Vec<String>,
    pub aspect_indices: Vec<usize>,
    pub delta: Vec<f64>,
    pub complexity: f64,
    pub strength: f64,
    pub epsilon: f64,
    pub degenerate: bool,
    pub valid: bool,
    pub score: f64,
    pub counterfactual_score: f64,
    pub boundary_score: f64,
}

impl ExplanationRecord {
    pub fn new(e: &Explanation, corpus: &Corpus, hash: &str) -> Self {
        Self {
            config_hash: hash.to_string(),
            user_id: corpus.user_ids[e.user].clone(),
            item_id: corpus.item_ids[e.item].clone(),
            user: e.user,
            item: e.item,
            rank: e.rank,
            variant: e.variant,
            aspects: e.aspects.iter().map(|&k| corpus.catalog.id(k).to_string()).collect(),
            aspect_indices: e.aspects.clone(),
            delta: e.delta.clone(),
            complexity: e.complexity,
            strength: e.strength,
            epsilon: e.epsilon,
            degenerate: e.degenerate,
            valid: e.valid,
            score: e.score,
            counterfactual_score: e.counterfactual_score,
            boundary_score: e.boundary_score,
        }
    }

    pub fn to_explanation(&self) -> Explanation {
        Explanation {
            user: self.user,
            item: self.item,
            rank: self.rank,
            variant: self.variant,
            aspects: self.aspect_indices.clone(),
            delta: self.delta.clone(),
            complexity: self.complexity,
            strength: self.strength,
            epsilon: self.epsilon,
            degenerate: self.degenerate,
            valid: self.valid,
            score: self.score,
            counterfactual_score: self.counterfactual_score,
            boundary_score: self.boundary_score,
        }
    }
}

pub fn write_explanations(path: &Path, records: &[ExplanationRecord]) -> Result<(), CliError> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r).map_err(|e| CliError::Internal(e.to_string()))?);
        body.push('\n');
    }
    write_file(path, body.as_bytes())
}

/// All records; every record must carry the same hash.
pub fn read_explanations(path: &Path) -> Result<(Vec<ExplanationRecord>, Option<String>), CliError> {
    let mut records: Vec<ExplanationRecord> = Vec::new();
    for (no, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExplanationRecord = serde_json::from_str(&line).map_err(|e| {
            CliError::Input(format!("{} line {}: {e}", path.display(), no + 1))
        })?;
        if let Some(first) = records.first() {
            check_hash(path, &rec.config_hash, &first.config_hash)?;
        }
        records.push(rec);
    }
    let hash = records.first().map(|r| r.config_hash.clone());
    Ok((records, hash))
}
