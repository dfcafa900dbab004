//! Pipeline stages. Each reads the artifacts of its predecessor from the
//! output directory, checks their hashes against the current configuration
//! and writes its own artifacts plus a manifest entry.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use counter_core::corpus::{
    build_matrices, ingest_path, split, AspectCatalog, AspectMatrices, CatalogPolicy, Corpus,
    HoldoutSplit, IngestOptions,
};
use counter_core::counterfactual::{explain_lists, Explanation, Variant};
use counter_core::metrics::{evaluate, ground_truth, EvalOptions, EvalReport, PairRow};
use counter_core::recsys::{recommend_top_k, train, RankedList, RecommenderModel};
use counter_core::synth::{generate_text, ingest_generated, write_truth_tsv};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, stage, ExplanationRecord, Layout};
use crate::config::RunConfig;
use crate::error::{io_error, CliError};

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub hash: String,
    pub files: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// `manifest.json`: one entry per completed stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageEntry>,
}

fn record_stage(
    layout: &Layout,
    cfg: &RunConfig,
    name: &str,
    hash: &str,
    files: &[std::path::PathBuf],
    started: u64,
) -> Result<(), CliError> {
    let path = layout.manifest();
    let mut manifest: Manifest = match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_default(),
        Err(_) => Manifest::default(),
    };
    manifest.config_hash = cfg.config_hash();
    manifest.seed = cfg.seed;
    manifest.stages.insert(
        name.to_string(),
        StageEntry {
            hash: hash.to_string(),
            files: files
                .iter()
                .map(|p| {
                    p.strip_prefix(&layout.root)
                        .unwrap_or(p)
                        .display()
                        .to_string()
                })
                .collect(),
            started_unix: started,
            finished_unix: now(),
        },
    );
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    artifacts::write_file(&path, &bytes)
}

/// Parses the configured interaction file into the corpus stage.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<String, CliError> {
    let started = now();
    let layout = Layout::new(&cfg.out);
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("no `data` interaction file configured".into()))?;
    let catalog = match &cfg.aspects {
        Some(p) => {
            let file = std::fs::File::open(p).map_err(|e| io_error(p, e))?;
            CatalogPolicy::Fixed(AspectCatalog::read_tsv(std::io::BufReader::new(file))?)
        }
        None => CatalogPolicy::Open,
    };
    if !data.exists() {
        return Err(CliError::Input(format!(
            "missing prerequisite file {}",
            data.display()
        )));
    }
    let corpus = ingest_path(
        data,
        IngestOptions {
            scale: cfg.scale,
            catalog,
            ..Default::default()
        },
    )?;
    log::info!(
        "ingested {} users, {} items, {} aspects, {} interactions",
        corpus.m(),
        corpus.n(),
        corpus.r(),
        corpus.records.len()
    );
    let hash = artifacts::write_corpus(&layout, &corpus)?;
    record_stage(
        &layout,
        cfg,
        "corpus",
        &hash,
        &[layout.interactions(), layout.aspects(), layout.users(), layout.items()],
        started,
    )?;
    Ok(hash)
}

/// Generates a planted corpus and ingests it as the corpus stage.
pub fn cmd_synth(cfg: &RunConfig) -> Result<String, CliError> {
    let started = now();
    let layout = Layout::new(&cfg.out);
    let mut spec = cfg.synth.clone();
    spec.seed = cfg.seed;
    spec.scale = cfg.scale;
    let (text, truth) = generate_text(&spec)?;
    let corpus = ingest_generated(&spec, text.as_bytes())?;
    log::info!(
        "generated {} interactions over {} users and {} items",
        corpus.records.len(),
        corpus.m(),
        corpus.n()
    );
    let hash = artifacts::write_corpus(&layout, &corpus)?;
    let stamp = format!("{}{hash}\n", artifacts::STAMP_PREFIX);
    let mut raw = stamp.clone().into_bytes();
    raw.extend_from_slice(text.as_bytes());
    artifacts::write_file(&layout.synth_interactions(), &raw)?;
    let mut truth_bytes = stamp.into_bytes();
    write_truth_tsv(&truth, &corpus, &mut truth_bytes).map_err(|e| CliError::Internal(e.to_string()))?;
    artifacts::write_file(&layout.synth_truth(), &truth_bytes)?;
    record_stage(
        &layout,
        cfg,
        "corpus",
        &hash,
        &[
            layout.synth_interactions(),
            layout.synth_truth(),
            layout.interactions(),
            layout.aspects(),
            layout.users(),
            layout.items(),
        ],
        started,
    )?;
    Ok(hash)
}

struct CorpusStage {
    corpus: Corpus,
    split: HoldoutSplit,
    matrices: AspectMatrices,
    hash: String,
}

fn load_corpus(cfg: &RunConfig, layout: &Layout) -> Result<CorpusStage, CliError> {
    let (corpus, hash) = artifacts::read_corpus(layout, cfg.scale)?;
    let split = split(&corpus);
    let matrices = build_matrices(&corpus, &split);
    Ok(CorpusStage {
        corpus,
        split,
        matrices,
        hash,
    })
}

fn load_model(
    cfg: &RunConfig,
    layout: &Layout,
    corpus: &CorpusStage,
) -> Result<(RecommenderModel, String), CliError> {
    let (model, found) = artifacts::read_model(layout)?;
    let expected = stage::model(&corpus.hash, cfg);
    artifacts::check_hash(&layout.model(), &found, &expected)?;
    if model.r() != corpus.matrices.r() {
        return Err(CliError::Input(format!(
            "model expects {} aspects but the corpus has {}",
            model.r(),
            corpus.matrices.r()
        )));
    }
    Ok((model, expected))
}

fn load_rankings(
    cfg: &RunConfig,
    layout: &Layout,
    model_hash: &str,
) -> Result<(Vec<RankedList>, String), CliError> {
    let (lists, found) = artifacts::read_rankings(layout, cfg.k)?;
    let expected = stage::rankings(model_hash, cfg);
    artifacts::check_hash(&layout.rankings(), &found, &expected)?;
    Ok((lists, expected))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String, CliError> {
    let started = now();
    let layout = Layout::new(&cfg.out);
    let c = load_corpus(cfg, &layout)?;
    let trained = train(&c.matrices, &cfg.train, cfg.seed)?;
    if let (Some(first), Some(last)) = (trained.loss_trace.first(), trained.loss_trace.last()) {
        log::info!("trained {} epochs, loss {first:.4} -> {last:.4}", trained.loss_trace.len());
    }
    let hash = stage::model(&c.hash, cfg);
    artifacts::write_model(&layout, &trained.model, &trained.loss_trace, &hash)?;
    record_stage(&layout, cfg, "model", &hash, &[layout.model(), layout.loss()], started)?;
    Ok(hash)
}

/// Top-K lists for every user with a held-out test set.
pub fn cmd_recommend(cfg: &RunConfig) -> Result<String, CliError> {
    let started = now();
    let layout = Layout::new(&cfg.out);
    let c = load_corpus(cfg, &layout)?;
    let (model, model_hash) = load_model(cfg, &layout, &c)?;
    let lists = c
        .split
        .evaluable_users()
        .map(|u| recommend_top_k(u, cfg.k, &model, &c.matrices))
        .collect::<Result<Vec<_>, _>>()?;
    log::info!("ranked {} users", lists.len());
    let hash = stage::rankings(&model_hash, cfg);
    artifacts::write_rankings(&layout, &c.corpus, &lists, &hash)?;
    record_stage(&layout, cfg, "rankings", &hash, &[layout.rankings()], started)?;
    Ok(hash)
}

fn explain_all(
    cfg: &RunConfig,
    model: &RecommenderModel,
    matrices: &AspectMatrices,
    lists: &[RankedList],
) -> Result<Vec<Explanation>, CliError> {
    let mut out = Vec::new();
    for &variant in &cfg.variants {
        let batch = explain_lists(model, matrices, lists, &cfg.cf, variant)?;
        let valid = batch.iter().filter(|e| e.valid).count();
        log::info!("{variant}: {valid} of {} explanations valid", batch.len());
        out.extend(batch);
    }
    Ok(out)
}

pub fn cmd_explain(cfg: &RunConfig) -> Result<String, CliError> {
    let started = now();
    let layout = Layout::new(&cfg.out);
    let c = load_corpus(cfg, &layout)?;
    let (model, model_hash) = load_model(cfg, &layout, &c)?;
    let (lists, rank_hash) = load_rankings(cfg, &layout, &model_hash)?;
    let hash = stage::explanations(&rank_hash, cfg);
    let records: Vec<ExplanationRecord> = explain_all(cfg, &model, &c.matrices, &lists)?
        .iter()
        .map(|e| ExplanationRecord::new(e, &c.corpus, &hash))
        .collect();
    artifacts::write_explanations(&layout.explanations(), &records)?;
    record_stage(&layout, cfg, "explanations", &hash, &[layout.explanations()], started)?;
    Ok(hash)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    /// `ok`, or `not-applicable` when there was nothing to evaluate.
    pub status: String,
    pub k: usize,
    pub variants: Vec<VariantReport>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>, CliError> {
    let err = |e: csv::Error| CliError::Internal(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}

fn write_reports(
    layout: &Layout,
    corpus: &Corpus,
    report: &ReportFile,
    pairs: &[(Variant, Vec<PairRow>)],
) -> Result<(), CliError> {
    let mut json = serde_json::to_vec_pretty(report).map_err(|e| CliError::Internal(e.to_string()))?;
    json.push(b'\n');
    artifacts::write_file(&layout.report(), &json)?;
    let h = &report.config_hash;
    let pair_rows = pairs
        .iter()
        .flat_map(|(v, rows)| {
            rows.iter().map(move |p| {
                vec![
                    h.clone(),
                    v.to_string(),
                    corpus.user_ids[p.user].clone(),
                    corpus.item_ids[p.item].clone(),
                    p.rank.to_string(),
                    p.valid.to_string(),
                    p.aspects.to_string(),
                    p.complexity.to_string(),
                    p.strength.to_string(),
                    opt(p.precision),
                    opt(p.recall),
                    opt(p.f1),
                    opt(p.necessary),
                    opt(p.sufficient),
                ]
            })
        })
        .collect();
    let header = [
        "config_hash",
        "variant",
        "user_id",
        "item_id",
        "rank",
        "valid",
        "aspects",
        "complexity",
        "strength",
        "precision",
        "recall",
        "f1",
        "necessary",
        "sufficient",
    ];
    artifacts::write_file(&layout.pairs(), &csv_bytes(&header, pair_rows)?)?;
    let profile_rows = report
        .variants
        .iter()
        .flat_map(|v| {
            v.report.profile.iter().map(move |p| {
                vec![
                    h.clone(),
                    v.variant.to_string(),
                    p.rank.to_string(),
                    p.count.to_string(),
                    p.mean_complexity.to_string(),
                    p.mean_strength.to_string(),
                    p.mean_aspects.to_string(),
                ]
            })
        })
        .collect();
    let header = [
        "config_hash",
        "variant",
        "rank",
        "count",
        "mean_complexity",
        "mean_strength",
        "mean_aspects",
    ];
    artifacts::write_file(&layout.profile(), &csv_bytes(&header, profile_rows)?)
}

/// Scores the explanation file. An empty file yields a `not-applicable`
/// report and [`CliError::NotApplicable`].
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<ReportFile, CliError> {
    let started = now();
    let layout = Layout::new(&cfg.out);
    let c = load_corpus(cfg, &layout)?;
    let (model, model_hash) = load_model(cfg, &layout, &c)?;
    let expected = stage::explanations(&stage::rankings(&model_hash, cfg), cfg);
    let (records, found) = artifacts::read_explanations(&layout.explanations())?;
    let hash = stage::report(&expected, cfg);
    let files = [layout.report(), layout.pairs(), layout.profile()];

    let Some(found) = found else {
        let report = ReportFile {
            config_hash: hash.clone(),
            status: "not-applicable".into(),
            k: cfg.k,
            variants: Vec::new(),
        };
        write_reports(&layout, &c.corpus, &report, &[])?;
        record_stage(&layout, cfg, "report", &hash, &files, started)?;
        return Err(CliError::NotApplicable(format!(
            "{} holds no explanations",
            layout.explanations().display()
        )));
    };
    artifacts::check_hash(&layout.explanations(), &found, &expected)?;

    let truth = ground_truth(&c.corpus, &c.split);
    let mut order: Vec<Variant> = Vec::new();
    let mut groups: BTreeMap<Variant, Vec<Explanation>> = BTreeMap::new();
    for r in &records {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
        groups.entry(r.variant).or_default().push(r.to_explanation());
    }
    let options = EvalOptions {
        k: cfg.k,
        random_seed: Some(cfg.random_seed),
    };
    let mut variants = Vec::new();
    let mut pairs = Vec::new();
    for v in order {
        let ev = evaluate(&model, &c.matrices, &truth, &groups[&v], options)?;
        variants.push(VariantReport {
            variant: v,
            report: ev.report,
        });
        pairs.push((v, ev.pairs));
    }
    let report = ReportFile {
        config_hash: hash.clone(),
        status: "ok".into(),
        k: cfg.k,
        variants,
    };
    write_reports(&layout, &c.corpus, &report, &pairs)?;
    record_stage(&layout, cfg, "report", &hash, &files, started)?;
    Ok(report)
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub variant: Variant,
    pub report: EvalReport,
}

/// Explains and evaluates once per value of the lambda grid.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>, CliError> {
    let started = now();
    let layout = Layout::new(&cfg.out);
    let c = load_corpus(cfg, &layout)?;
    let (model, model_hash) = load_model(cfg, &layout, &c)?;
    let (lists, rank_hash) = load_rankings(cfg, &layout, &model_hash)?;
    let truth = ground_truth(&c.corpus, &c.split);
    let hash = stage::sweep(&rank_hash, cfg);
    let mut rows = Vec::new();
    for &lambda in &cfg.lambda_grid {
        let mut point = cfg.clone();
        point.cf.lambda = lambda;
        for &variant in &cfg.variants {
            let batch = explain_lists(&model, &c.matrices, &lists, &point.cf, variant)?;
            if batch.is_empty() {
                return Err(CliError::NotApplicable("no recommendations to explain".into()));
            }
            let ev = evaluate(
                &model,
                &c.matrices,
                &truth,
                &batch,
                EvalOptions {
                    k: cfg.k,
                    random_seed: Some(cfg.random_seed),
                },
            )?;
            log::info!("lambda {lambda} {variant}: fidelity {}", ev.report.fidelity);
            rows.push(SweepRow {
                lambda,
                variant,
                report: ev.report,
            });
        }
    }
    let body = rows
        .iter()
        .map(|r| {
            let rep = &r.report;
            vec![
                hash.clone(),
                r.lambda.to_string(),
                r.variant.to_string(),
                rep.attempted.to_string(),
                rep.valid.to_string(),
                rep.fidelity.to_string(),
                opt(rep.mean_complexity),
                opt(rep.mean_strength),
                opt(rep.mean_aspects),
                opt(rep.user_oriented.map(|u| u.f1)),
                opt(rep.causal.as_ref().map(|c| c.fns)),
            ]
        })
        .collect();
    let header = [
        "config_hash",
        "lambda",
        "variant",
        "attempted",
        "valid",
        "fidelity",
        "mean_complexity",
        "mean_strength",
        "mean_aspects",
        "f1",
        "fns",
    ];
    artifacts::write_file(&layout.sweep(), &csv_bytes(&header, body)?)?;
    record_stage(&layout, cfg, "sweep", &hash, &[layout.sweep()], started)?;
    Ok(rows)
}

/// Corpus (ingest when `data` is set, otherwise synth), train, recommend,
/// explain and evaluate.
pub fn cmd_run(cfg: &RunConfig) -> Result<ReportFile, CliError> {
    if cfg.data.is_some() {
        cmd_ingest(cfg)?;
    } else {
        cmd_synth(cfg)?;
    }
    cmd_train(cfg)?;
    cmd_recommend(cfg)?;
    cmd_explain(cfg)?;
    cmd_evaluate(cfg)
}
