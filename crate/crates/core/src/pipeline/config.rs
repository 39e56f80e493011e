//! Flat key/value pipeline configuration.
//!
//! The file is TOML with top-level keys only. Every key can also be given on
//! the command line as `--<key-with-dashes>`; see [`CONFIG_KEYS`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusParams, SyntheticTaskSpec, TokenId};
use crate::error::{Error, Result};
use crate::influence::DEFAULT_LAMBDA_MULTIPLIER;
use crate::mixer::DEFAULT_BUCKET_EDGES;
use crate::rng;
use crate::simulator::SimulationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMode {
    /// Min-max scaled joint influence.
    Scaled,
    /// Raw joint influence; fails on negative densities.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,

    pub tasks: Vec<String>,
    pub noise_rates: Vec<f64>,
    pub vocab_size: usize,
    /// Per-task band lengths; empty splits the vocabulary evenly.
    pub band_sizes: Vec<usize>,
    /// Fraction of a band shared with the next task's band.
    pub band_overlap: f64,
    pub max_band_overlap: f64,
    pub per_task_docs: usize,
    pub distractor_fraction: f64,
    pub seq_len: usize,
    pub source_tags: Vec<String>,
    pub probe_size: usize,

    pub steps: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub lr: f64,
    pub dim: usize,

    pub lambda_multiplier: f64,

    pub retention: f64,
    pub token_budget: usize,
    /// Same token cap for every group.
    pub group_cap_tokens: Option<usize>,
    /// Drop samples whose joint score is below this nearest-rank percentile
    /// before weighting.
    pub percentile_threshold: Option<f64>,
    pub density_mode: DensityMode,

    pub final_epochs: usize,
    pub final_lr: f64,
    pub repeats: usize,
    pub baselines: Vec<String>,

    pub overlap_buckets: usize,
    pub bucket_edges: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: None,
            out_dir: PathBuf::from("automixer-out"),
            tasks: vec!["copy".into(), "cycle".into(), "jump".into()],
            noise_rates: vec![0.1, 0.2, 0.3],
            vocab_size: 64,
            band_sizes: vec![8, 16, 32],
            band_overlap: 0.0,
            max_band_overlap: 0.25,
            per_task_docs: 500,
            distractor_fraction: 0.25,
            seq_len: 64,
            source_tags: vec!["crawl-01".into(), "crawl-02".into(), "crawl-03".into(), "crawl-04".into()],
            probe_size: 256,
            steps: 5000,
            batch_size: 8,
            checkpoint_every: 250,
            lr: 0.05,
            dim: 16,
            lambda_multiplier: DEFAULT_LAMBDA_MULTIPLIER,
            retention: 0.5,
            token_budget: 100_000,
            group_cap_tokens: None,
            percentile_threshold: None,
            density_mode: DensityMode::Scaled,
            final_epochs: 1,
            final_lr: 0.5,
            repeats: 2,
            baselines: vec!["uniform".into(), "ppl".into()],
            overlap_buckets: 10,
            bucket_edges: DEFAULT_BUCKET_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Int,
    Float,
    Str,
    IntOrNone,
    FloatOrNone,
    StrList,
    IntList,
    FloatList,
}

/// Every config key with its value kind and a one-line description.
pub const CONFIG_KEYS: &[(&str, KeyKind, &str)] = &[
    ("seed", KeyKind::IntOrNone, "master seed for every stochastic stage"),
    ("out_dir", KeyKind::Str, "artifact directory"),
    ("tasks", KeyKind::StrList, "synthetic task ids"),
    ("noise_rates", KeyKind::FloatList, "per-task noise rate in [0, 1)"),
    ("vocab_size", KeyKind::Int, "vocabulary size V"),
    ("band_sizes", KeyKind::IntList, "per-task vocab band lengths (empty: even split)"),
    ("band_overlap", KeyKind::Float, "fraction of each task band shared with the next task"),
    ("max_band_overlap", KeyKind::Float, "largest allowed band overlap"),
    ("per_task_docs", KeyKind::Int, "corpus documents per task"),
    ("distractor_fraction", KeyKind::Float, "fraction of pure-noise documents"),
    ("seq_len", KeyKind::Int, "tokens per document"),
    ("source_tags", KeyKind::StrList, "synthetic source tags"),
    ("probe_size", KeyKind::Int, "probe samples per task (q)"),
    ("steps", KeyKind::Int, "simulation steps"),
    ("batch_size", KeyKind::Int, "batch size for simulation and final training"),
    ("checkpoint_every", KeyKind::Int, "checkpoint cadence in steps"),
    ("lr", KeyKind::Float, "simulation learning rate"),
    ("dim", KeyKind::Int, "model width d"),
    ("lambda_multiplier", KeyKind::Float, "DataInf damping multiplier"),
    ("retention", KeyKind::Float, "fraction of the corpus kept per checkpoint group"),
    ("token_budget", KeyKind::Int, "mixture token budget T"),
    ("group_cap_tokens", KeyKind::IntOrNone, "token cap applied to every group"),
    ("percentile_threshold", KeyKind::FloatOrNone, "joint-score percentile filter"),
    ("density_mode", KeyKind::Str, "`scaled` or `raw` group densities"),
    ("final_epochs", KeyKind::Int, "passes over the manifest in final training"),
    ("final_lr", KeyKind::Float, "final training learning rate"),
    ("repeats", KeyKind::Int, "final training repeats (fresh seeds)"),
    ("baselines", KeyKind::StrList, "baselines to report: uniform, ppl"),
    ("overlap_buckets", KeyKind::Int, "buckets in the overlap table"),
    ("bucket_edges", KeyKind::FloatList, "percentile edges of the bucket table"),
];

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    /// Builds a config from an optional file table plus `key = value`
    /// overrides, overrides winning.
    pub fn from_table(mut base: toml::Table, overrides: toml::Table) -> Result<Self> {
        base.extend(overrides);
        let cfg: PipelineConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.tasks.is_empty() {
            return fail("at least one task is required".into());
        }
        if self.noise_rates.len() != self.tasks.len() {
            return fail(format!(
                "noise_rates has {} entries for {} tasks",
                self.noise_rates.len(),
                self.tasks.len()
            ));
        }
        for (key, v) in [
            ("band_overlap", self.band_overlap),
            ("distractor_fraction", self.distractor_fraction),
        ] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{key} must be in [0, 1), got {v}"));
            }
        }
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return fail(format!("retention must be in (0, 1], got {}", self.retention));
        }
        if let Some(p) = self.percentile_threshold {
            if !(0.0..100.0).contains(&p) {
                return fail(format!("percentile_threshold must be in [0, 100), got {p}"));
            }
        }
        for (key, v) in [
            ("vocab_size", self.vocab_size),
            ("per_task_docs", self.per_task_docs),
            ("probe_size", self.probe_size),
            ("batch_size", self.batch_size),
            ("dim", self.dim),
            ("token_budget", self.token_budget),
            ("repeats", self.repeats),
            ("overlap_buckets", self.overlap_buckets),
        ] {
            if v == 0 {
                return fail(format!("{key} must be >= 1"));
            }
        }
        if self.seq_len < 2 {
            return fail(format!("seq_len must be >= 2, got {}", self.seq_len));
        }
        for (key, v) in [("lr", self.lr), ("final_lr", self.final_lr), ("lambda_multiplier", self.lambda_multiplier)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{key} must be a positive number, got {v}"));
            }
        }
        if let Some(b) = self.baselines.iter().find(|b| !matches!(b.as_str(), "uniform" | "ppl")) {
            return fail(format!("unknown baseline `{b}` (expected uniform or ppl)"));
        }
        self.band_layout()?;
        Ok(())
    }

    /// The seed, or a configuration error naming the stage that needs it.
    pub fn require_seed(&self, stage: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("stage `{stage}` is stochastic and needs an explicit seed")))
    }

    /// `(start, len)` of each task band, laid out left to right with
    /// consecutive bands sharing `band_overlap` of the shorter one. Without
    /// `band_sizes` all bands have the largest length that fits.
    pub fn band_layout(&self) -> Result<Vec<(TokenId, usize)>> {
        let m = self.tasks.len();
        let lens = if self.band_sizes.is_empty() {
            let stride_frac = 1.0 - self.band_overlap;
            let len = (self.vocab_size as f64 / (1.0 + (m as f64 - 1.0) * stride_frac)).floor() as usize;
            vec![len; m]
        } else if self.band_sizes.len() == m {
            self.band_sizes.clone()
        } else {
            return Err(Error::Config(format!("band_sizes has {} entries for {m} tasks", self.band_sizes.len())));
        };
        if lens.iter().any(|&l| l < 2) {
            return Err(Error::Config(format!(
                "task bands need at least 2 tokens; vocab_size {} with bands {lens:?}",
                self.vocab_size
            )));
        }
        let mut out = Vec::with_capacity(m);
        let mut start = 0usize;
        for (i, &len) in lens.iter().enumerate() {
            if i > 0 {
                let prev = lens[i - 1];
                let shared = (self.band_overlap * prev.min(len) as f64).round() as usize;
                start += prev - shared.min(prev - 1);
            }
            out.push((start as TokenId, len));
        }
        let end = start + lens[m - 1];
        if end > self.vocab_size {
            return Err(Error::Config(format!(
                "task bands {lens:?} need {end} tokens, vocab_size is {}",
                self.vocab_size
            )));
        }
        Ok(out)
    }

    pub fn task_specs(&self) -> Result<Vec<SyntheticTaskSpec>> {
        let seed = self.require_seed("gen-corpus")?;
        self.band_layout()?
            .into_iter()
            .zip(self.tasks.iter().zip(&self.noise_rates))
            .enumerate()
            .map(|(i, ((start, len), (task, &noise)))| {
                SyntheticTaskSpec::cyclic(
                    task.clone(),
                    start..start + len as TokenId,
                    noise,
                    rng::derive_seed(seed, "task-spec", i as u64),
                )
            })
            .collect()
    }

    pub fn corpus_params(&self) -> Result<CorpusParams> {
        Ok(CorpusParams {
            vocab_size: self.vocab_size,
            per_task_docs: self.per_task_docs,
            distractor_fraction: self.distractor_fraction,
            seq_len: self.seq_len,
            seed: rng::derive_seed(self.require_seed("gen-corpus")?, "corpus", 0),
            source_tags: self.source_tags.clone(),
            max_band_overlap: self.max_band_overlap,
        })
    }

    pub fn simulation(&self) -> Result<SimulationConfig> {
        Ok(SimulationConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            checkpoint_every: self.checkpoint_every,
            lr: self.lr,
            dim: self.dim,
            seed: rng::derive_seed(self.require_seed("simulate")?, "simulate", 0),
        })
    }

    pub fn group_caps(&self, group_ids: &[String]) -> std::collections::BTreeMap<String, usize> {
        self.group_cap_tokens
            .map(|c| group_ids.iter().map(|g| (g.clone(), c)).collect())
            .unwrap_or_default()
    }
}

/// Parses a command-line value for `key` into a TOML value.
pub fn parse_key_value(key: &str, raw: &str) -> Result<toml::Value> {
    let (_, kind, _) = CONFIG_KEYS
        .iter()
        .find(|(k, _, _)| *k == key)
        .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    let bad = |what: &str| Error::Config(format!("--{}: expected {what}, got `{raw}`", key.replace('_', "-")));
    let int = |s: &str| s.trim().parse::<i64>().map(toml::Value::Integer).map_err(|_| bad("an integer"));
    let float = |s: &str| s.trim().parse::<f64>().map(toml::Value::Float).map_err(|_| bad("a number"));
    let list = |f: &dyn Fn(&str) -> Result<toml::Value>| -> Result<toml::Value> {
        if raw.trim().is_empty() {
            return Ok(toml::Value::Array(Vec::new()));
        }
        raw.split(',').map(f).collect::<Result<Vec<_>>>().map(toml::Value::Array)
    };
    match kind {
        KeyKind::Int | KeyKind::IntOrNone => int(raw),
        KeyKind::Float | KeyKind::FloatOrNone => float(raw),
        KeyKind::Str => Ok(toml::Value::String(raw.to_string())),
        KeyKind::StrList => list(&|s| Ok(toml::Value::String(s.trim().to_string()))),
        KeyKind::IntList => list(&int),
        KeyKind::FloatList => list(&float),
    }
}
