//! Experiment configuration: a TOML file whose values can be overridden by
//! `section.key=value` pairs. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use paml_core::memory::{Eviction, SearchMode, TreeConfig};
use paml_core::meta::{Algorithm, OptimizerKind, PsiUpdate, TrainerConfig};
use paml_core::tasks::{PreprocessConfig, SynthConfig};
use paml_core::OutputKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid override `{0}`: expected section.key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataConfig {
    Synthetic(SyntheticData),
    Movielens(MovielensData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticData {
    pub p1: f64,
    pub x1: f64,
    pub x2: f64,
    pub n_tasks: usize,
    pub noise_sd: f64,
    pub support_size: usize,
    pub query_size: usize,
    pub split: [u32; 3],
}

impl Default for SyntheticData {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            p1: s.p1,
            x1: s.x1,
            x2: s.x2,
            n_tasks: s.n_tasks,
            noise_sd: s.noise_sd,
            support_size: s.support_size,
            query_size: s.query_size,
            split: [7, 1, 2],
        }
    }
}

impl SyntheticData {
    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            p1: self.p1,
            p2: 1.0 - self.p1,
            x1: self.x1,
            x2: self.x2,
            n_tasks: self.n_tasks,
            noise_sd: self.noise_sd,
            seed,
            support_size: self.support_size,
            query_size: self.query_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feedback {
    Rating,
    /// Ratings at or above `click_threshold` become clicks.
    Click,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovielensData {
    /// Directory holding `ratings.dat`, `users.dat` and `movies.dat`.
    pub dir: PathBuf,
    /// Optional tab-separated item enrichment file.
    #[serde(default)]
    pub enrichment: Option<PathBuf>,
    #[serde(default = "defaults::cold_start_fraction")]
    pub cold_start_fraction: f64,
    #[serde(default = "defaults::min_items")]
    pub min_items: usize,
    #[serde(default = "defaults::split")]
    pub split: [u32; 3],
    #[serde(default = "defaults::support_ratio")]
    pub support_ratio: f64,
    #[serde(default)]
    pub max_users: Option<usize>,
    #[serde(default = "defaults::feedback")]
    pub feedback: Feedback,
    #[serde(default = "defaults::click_threshold")]
    pub click_threshold: f64,
}

impl MovielensData {
    pub fn preprocess_config(&self, seed: u64) -> PreprocessConfig {
        PreprocessConfig {
            seed,
            cold_start_fraction: self.cold_start_fraction,
            min_items: self.min_items,
            split: self.split,
            support_ratio: self.support_ratio,
            max_users: self.max_users,
        }
    }
}

mod defaults {
    use super::Feedback;

    pub fn cold_start_fraction() -> f64 {
        0.8
    }
    pub fn min_items() -> usize {
        2
    }
    pub fn split() -> [u32; 3] {
        [7, 1, 2]
    }
    pub fn support_ratio() -> f64 {
        0.8
    }
    pub fn feedback() -> Feedback {
        Feedback::Rating
    }
    pub fn click_threshold() -> f64 {
        4.0
    }
    pub fn trials() -> usize {
        3
    }
    pub fn output_dir() -> std::path::PathBuf {
        "runs/latest".into()
    }
    pub fn yes() -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Output {
    Rating,
    Ctr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiRule {
    Backprop,
    Literal,
}

/// Trainer settings; unset fields take the defaults of each algorithm.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    /// Algorithms trained on the same data in every trial.
    pub algorithms: Vec<String>,
    pub output: Option<Output>,
    pub embedding_dim: Option<usize>,
    pub hidden_dims: Option<Vec<usize>>,
    pub lr_hidden_dims: Option<Vec<usize>>,
    pub lr_scale: Option<f64>,
    pub outer_lr: Option<f64>,
    pub fixed_inner_lr: Option<f64>,
    pub meta_sgd_init_lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub gamma: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub warmup_inner_lr: Option<f64>,
    pub clip_norm: Option<f64>,
    pub optimizer: Option<Optimizer>,
    pub psi_update: Option<PsiRule>,
    pub frozen_alpha: Option<f64>,
    pub log_steps: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchKind {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvictionKind {
    Lru,
    Lfu,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    pub capacity: Option<usize>,
    pub k_train: Option<usize>,
    pub k_infer: Option<usize>,
    pub delta: Option<f64>,
    pub sigma: Option<f64>,
    pub search: Option<SearchKind>,
    pub trees: Option<usize>,
    pub checks: Option<usize>,
    pub top_dims: Option<usize>,
    pub eviction: Option<EvictionKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitSection {
    #[serde(default = "defaults::yes")]
    pub checkpoint: bool,
    #[serde(default = "defaults::yes")]
    pub lr_dump: bool,
    #[serde(default)]
    pub embeddings: bool,
    #[serde(default = "defaults::yes")]
    pub tree_dump: bool,
    #[serde(default = "defaults::yes")]
    pub history: bool,
}

impl Default for EmitSection {
    fn default() -> Self {
        Self {
            checkpoint: true,
            lr_dump: true,
            embeddings: false,
            tree_dump: true,
            history: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    /// Seed of each trial; trial `t` defaults to `seed + t`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub parallel_trials: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            trials: defaults::trials(),
            seeds: None,
            seed: 0,
            output_dir: defaults::output_dir(),
            parallel_trials: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub tree: TreeSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub emit: EmitSection,
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `section.key` (any depth) in `table` to the TOML value `raw`, or to
/// the string `raw` when it does not parse.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        let next = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = next
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// A validated configuration and the hash of its effective settings.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Canonical TOML of `config`.
    pub canonical: String,
    /// SHA-256 of `canonical`, hex.
    pub hash: String,
}

impl LoadedConfig {
    pub fn from_table(mut table: toml::Table, overrides: &[String]) -> Result<Self, ConfigError> {
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        let canonical = toml::to_string(&config).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        Ok(Self {
            config,
            canonical,
            hash,
        })
    }

    pub fn from_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Self::from_table(table, overrides)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str(&text, overrides)
    }
}

impl ExperimentConfig {
    pub fn algorithms(&self) -> Result<Vec<Algorithm>, ConfigError> {
        if self.trainer.algorithms.is_empty() {
            return Err(ConfigError::Invalid("trainer.algorithms is empty".into()));
        }
        let mut out: Vec<Algorithm> = Vec::new();
        for name in &self.trainer.algorithms {
            let a: Algorithm = name.parse().map_err(|e: paml_core::Error| ConfigError::Invalid(e.to_string()))?;
            if out.contains(&a) {
                return Err(ConfigError::Invalid(format!("algorithm `{a}` listed twice")));
            }
            out.push(a);
        }
        Ok(out)
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.run.seeds {
            Some(s) => s.clone(),
            None => (0..self.run.trials as u64).map(|t| self.run.seed + t).collect(),
        }
    }

    pub fn output_kind(&self) -> OutputKind {
        match self.trainer.output {
            Some(Output::Ctr) => OutputKind::CtrSoftmax,
            Some(Output::Rating) => OutputKind::RatingRegression,
            None => match &self.data {
                DataConfig::Movielens(m) if m.feedback == Feedback::Click => OutputKind::CtrSoftmax,
                _ => OutputKind::RatingRegression,
            },
        }
    }

    pub fn tree_config(&self) -> TreeConfig {
        let t = &self.tree;
        let base = TreeConfig::default();
        let mode = match t.search.unwrap_or(SearchKind::Exact) {
            SearchKind::Exact => SearchMode::Exact,
            SearchKind::Approximate => {
                let SearchMode::Approximate { trees, checks, top_dims } = SearchMode::approximate_default() else {
                    unreachable!("approximate default")
                };
                SearchMode::Approximate {
                    trees: t.trees.unwrap_or(trees),
                    checks: t.checks.unwrap_or(checks),
                    top_dims: t.top_dims.unwrap_or(top_dims),
                }
            }
        };
        TreeConfig {
            capacity: t.capacity.unwrap_or(base.capacity),
            k_train: t.k_train.unwrap_or(base.k_train),
            k_infer: t.k_infer.unwrap_or(base.k_infer),
            delta: t.delta.unwrap_or(base.delta),
            sigma: t.sigma.unwrap_or(base.sigma),
            mode,
            eviction: match t.eviction.unwrap_or(EvictionKind::Lru) {
                EvictionKind::Lru => Eviction::LeastRecentlyUsed,
                EvictionKind::Lfu => Eviction::LeastFrequentlyUsed,
            },
            seed: base.seed,
        }
    }

    /// Trainer settings for `algorithm` in the trial seeded with `seed`.
    pub fn trainer_config(&self, algorithm: Algorithm, seed: u64) -> TrainerConfig {
        let t = &self.trainer;
        let d = TrainerConfig::new(algorithm);
        TrainerConfig {
            algorithm,
            output: self.output_kind(),
            embedding_dim: t.embedding_dim.unwrap_or(d.embedding_dim),
            hidden_dims: t.hidden_dims.clone().unwrap_or(d.hidden_dims),
            lr_hidden_dims: t.lr_hidden_dims.clone().unwrap_or(d.lr_hidden_dims),
            lr_scale: t.lr_scale.unwrap_or(d.lr_scale),
            outer_lr: t.outer_lr.unwrap_or(d.outer_lr),
            fixed_inner_lr: t.fixed_inner_lr.unwrap_or(d.fixed_inner_lr),
            meta_sgd_init_lr: t.meta_sgd_init_lr.unwrap_or(d.meta_sgd_init_lr),
            epochs: t.epochs.unwrap_or(d.epochs),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            gamma: t.gamma.unwrap_or(d.gamma),
            warmup_epochs: t.warmup_epochs.unwrap_or(d.warmup_epochs),
            warmup_inner_lr: t.warmup_inner_lr.unwrap_or(d.warmup_inner_lr),
            clip_norm: t.clip_norm.unwrap_or(d.clip_norm),
            optimizer: match t.optimizer {
                Some(Optimizer::Sgd) => OptimizerKind::Sgd,
                Some(Optimizer::Adam) => OptimizerKind::Adam,
                None => d.optimizer,
            },
            psi_update: match t.psi_update {
                Some(PsiRule::Literal) => PsiUpdate::Literal,
                Some(PsiRule::Backprop) => PsiUpdate::Backprop,
                None => d.psi_update,
            },
            frozen_alpha: t.frozen_alpha,
            tree: self.tree_config(),
            log_steps: t.log_steps.unwrap_or(d.log_steps),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let algorithms = self.algorithms()?;
        if self.run.trials == 0 {
            return Err(ConfigError::Invalid("run.trials must be positive".into()));
        }
        if let Some(s) = &self.run.seeds {
            if s.len() != self.run.trials {
                return Err(ConfigError::Invalid(format!(
                    "run.seeds has {} entries for {} trials",
                    s.len(),
                    self.run.trials
                )));
            }
        }
        match &self.data {
            DataConfig::Synthetic(s) => {
                if !(0.5..1.0).contains(&s.p1) || s.n_tasks == 0 {
                    return Err(ConfigError::Invalid(format!(
                        "synthetic data needs 0.5 <= p1 < 1 and n_tasks > 0, got p1 = {}, n_tasks = {}",
                        s.p1, s.n_tasks
                    )));
                }
                if self.output_kind() == OutputKind::CtrSoftmax {
                    return Err(ConfigError::Invalid("synthetic data has rating targets".into()));
                }
            }
            DataConfig::Movielens(m) => {
                if m.feedback == Feedback::Rating && self.output_kind() == OutputKind::CtrSoftmax {
                    return Err(ConfigError::Invalid("a click head needs click feedback".into()));
                }
            }
        }
        for a in algorithms {
            self.trainer_config(a, 0)
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}
