//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use counter_core::counterfactual::{CfHyper, Variant};
use counter_core::recsys::TrainHyper;
use counter_core::synth::SynthSpec;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Every run setting. All fields can come from the config file or a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Interaction file for `ingest`; unused by `synth`.
    pub data: Option<PathBuf>,
    /// Optional aspect catalog restricting accepted aspects.
    pub aspects: Option<PathBuf>,
    pub out: PathBuf,
    pub scale: u32,
    pub k: usize,
    pub seed: u64,
    pub train: TrainHyper,
    pub cf: CfHyper,
    pub variants: Vec<Variant>,
    pub lambda_grid: Vec<f64>,
    pub random_seed: u64,
    pub threads: usize,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            aspects: None,
            out: PathBuf::from("counter-out"),
            scale: 5,
            k: 5,
            seed: 0,
            train: TrainHyper::default(),
            cf: CfHyper::default(),
            variants: vec![Variant::Multi, Variant::Single],
            lambda_grid: vec![1.0, 10.0, 100.0, 1000.0],
            random_seed: 0,
            threads: 0,
            synth: SynthSpec::default(),
        }
    }
}

/// Keys accepted in config files and as `--key` flags (with `-` for `_`).
pub const KEYS: &[&str] = &[
    "data",
    "aspects",
    "out",
    "scale",
    "k",
    "seed",
    "learning_rate",
    "epochs",
    "batch_size",
    "negative_ratio",
    "lambda",
    "gamma",
    "alpha",
    "tau",
    "step",
    "max_iter",
    "tol",
    "warmup",
    "variants",
    "lambda_grid",
    "random_seed",
    "threads",
    "synth_m",
    "synth_n",
    "synth_r",
    "synth_user_aspects",
    "synth_item_aspects",
    "synth_density",
    "synth_mention_p",
    "synth_mention_cap",
    "synth_noise",
    "synth_popularity",
];

/// Keys that never influence results and so stay out of hashes.
const UNHASHED: &[&str] = &["data", "aspects", "out", "threads"];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "aspects" => self.aspects = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "scale" => {
                self.scale = parse(key, v)?;
                self.synth.scale = self.scale;
            }
            "k" => self.k = parse(key, v)?,
            "seed" => {
                self.seed = parse(key, v)?;
                self.synth.seed = self.seed;
            }
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "negative_ratio" => self.train.negative_ratio = parse(key, v)?,
            "lambda" => self.cf.lambda = parse(key, v)?,
            "gamma" => self.cf.gamma = parse(key, v)?,
            "alpha" => self.cf.alpha = parse(key, v)?,
            "tau" => self.cf.tau = parse(key, v)?,
            "step" => self.cf.step = parse(key, v)?,
            "max_iter" => self.cf.max_iter = parse(key, v)?,
            "tol" => self.cf.tol = parse(key, v)?,
            "warmup" => self.cf.warmup = parse(key, v)?,
            "variants" => self.variants = parse_list(key, v)?,
            "lambda_grid" => self.lambda_grid = parse_list(key, v)?,
            "random_seed" => self.random_seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "synth_m" => self.synth.m = parse(key, v)?,
            "synth_n" => self.synth.n = parse(key, v)?,
            "synth_r" => self.synth.r = parse(key, v)?,
            "synth_user_aspects" => self.synth.user_aspects = parse(key, v)?,
            "synth_item_aspects" => self.synth.item_aspects = parse(key, v)?,
            "synth_density" => self.synth.density = parse(key, v)?,
            "synth_mention_p" => self.synth.mention_p = parse(key, v)?,
            "synth_mention_cap" => self.synth.mention_cap = parse(key, v)?,
            "synth_noise" => self.synth.noise = parse(key, v)?,
            "synth_popularity" => self.synth.popularity = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        Some(match key {
            "data" => path(&self.data),
            "aspects" => path(&self.aspects),
            "out" => self.out.display().to_string(),
            "scale" => self.scale.to_string(),
            "k" => self.k.to_string(),
            "seed" => self.seed.to_string(),
            "learning_rate" => self.train.learning_rate.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "negative_ratio" => self.train.negative_ratio.to_string(),
            "lambda" => self.cf.lambda.to_string(),
            "gamma" => self.cf.gamma.to_string(),
            "alpha" => self.cf.alpha.to_string(),
            "tau" => self.cf.tau.to_string(),
            "step" => self.cf.step.to_string(),
            "max_iter" => self.cf.max_iter.to_string(),
            "tol" => self.cf.tol.to_string(),
            "warmup" => self.cf.warmup.to_string(),
            "variants" => join(&self.variants),
            "lambda_grid" => join(&self.lambda_grid),
            "random_seed" => self.random_seed.to_string(),
            "threads" => self.threads.to_string(),
            "synth_m" => self.synth.m.to_string(),
            "synth_n" => self.synth.n.to_string(),
            "synth_r" => self.synth.r.to_string(),
            "synth_user_aspects" => self.synth.user_aspects.to_string(),
            "synth_item_aspects" => self.synth.item_aspects.to_string(),
            "synth_density" => self.synth.density.to_string(),
            "synth_mention_p" => self.synth.mention_p.to_string(),
            "synth_mention_cap" => self.synth.mention_cap.to_string(),
            "synth_noise" => self.synth.noise.to_string(),
            "synth_popularity" => self.synth.popularity.to_string(),
            _ => return None,
        })
    }

    /// Reads `key = value` lines; `#` starts a comment line.
    pub fn parse_file_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected `key = value`", no + 1))
            })?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "config line {}: unknown key `{key}`",
                    no + 1
                )));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!(
                    "config line {}: duplicate key `{key}`",
                    no + 1
                )));
            }
        }
        Ok(entries)
    }

    /// Builds a config from file entries and command-line overrides; flags
    /// win, and each conflict is logged.
    pub fn resolve(
        file: &BTreeMap<String, String>,
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (k, v) in file {
            cfg.set(k, v)?;
        }
        for (k, v) in overrides {
            if let Some(prev) = file.get(k) {
                if prev != v {
                    log::warn!("`{k}`: command-line value `{v}` overrides config file value `{prev}`");
                }
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                Self::parse_file_text(&text)?
            }
            None => BTreeMap::new(),
        };
        Self::resolve(&file, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.scale < 2 {
            return fail("scale must be at least 2".into());
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return fail("epochs and batch_size must be at least 1".into());
        }
        if !(self.train.learning_rate.is_finite() && self.train.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        if self.variants.is_empty() {
            return fail("variants must name at least one variant".into());
        }
        if self.lambda_grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return fail("lambda_grid values must be finite and non-negative".into());
        }
        self.cf
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Canonical `key=value` lines of every result-affecting key.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for key in KEYS.iter().filter(|k| !UNHASHED.contains(k)) {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get(key).unwrap_or_default());
            out.push('\n');
        }
        out
    }

    pub fn config_hash(&self) -> String {
        digest(&[self.canonical().as_bytes()])
    }

    /// Every key in file syntax, for `counter config`.
    pub fn to_file_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }
}

/// Hex SHA-256 over the concatenated parts, each length-prefixed.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_roundtrips() {
        let cfg = RunConfig::default();
        for key in KEYS {
            let value = cfg.get(key).unwrap();
            let mut other = RunConfig::default();
            other.set(key, &value).unwrap();
            assert_eq!(other.get(key).unwrap(), value, "{key}");
        }
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig::parse_file_text("# comment\nlambda = 10\nk=3\n").unwrap();
        let cfg = RunConfig::resolve(&file, &[("lambda".into(), "50".into())]).unwrap();
        assert_eq!(cfg.cf.lambda, 50.0);
        assert_eq!(cfg.k, 3);
    }

    #[test]
    fn bad_files_are_config_errors() {
        for text in ["lambda", "nope = 1", "k = 1\nk = 2"] {
            assert!(matches!(
                RunConfig::parse_file_text(text),
                Err(CliError::Config(_))
            ));
        }
        let file = RunConfig::parse_file_text("k = zero").unwrap();
        assert!(matches!(
            RunConfig::resolve(&file, &[]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn hash_ignores_paths_and_threads() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.set("out", "/elsewhere").unwrap();
        b.set("threads", "3").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        b.set("lambda", "1").unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.k, 5);
        assert_eq!(c.scale, 5);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.negative_ratio, 2);
        assert_eq!(c.cf.lambda, 100.0);
        assert_eq!(c.cf.gamma, 1.0);
        assert_eq!(c.cf.alpha, 0.2);
    }
}
