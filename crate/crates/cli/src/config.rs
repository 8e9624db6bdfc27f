//! Experiment configuration: one JSON document plus flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lcm_core::data::ConfusionSpec;
use lcm_core::targets::{TargetStrategy, DEFAULT_ALPHA};
use lcm_core::train::TrainConfig;

/// Where examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// JSON-lines corpus file.
    Path(PathBuf),
    /// Synthetic confused corpus.
    Generate(ConfusionSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Label-to-group JSON map. Generated corpora bring their own.
    #[serde(default)]
    pub groups: Option<PathBuf>,
    #[serde(default)]
    pub noise_rate: f64,
    /// The first entry is the baseline for significance tests.
    #[serde(default = "default_strategies")]
    pub strategies: Vec<TargetStrategy>,
    /// Training hyper-parameters; its `seed` is replaced per split.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Top-level seed, expanded into noise and split seeds.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads for independent runs; 0 = one per core.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default)]
    pub max_vocab: Option<usize>,
    /// Explicit label order; defaults to the sorted distinct labels.
    #[serde(default)]
    pub label_names: Option<Vec<String>>,
}

fn default_strategies() -> Vec<TargetStrategy> {
    vec![TargetStrategy::OneHot]
}

fn default_splits() -> usize {
    10
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_min_freq() -> usize {
    1
}

/// Scalar fields settable from the command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    /// Comma-separated kinds: `one-hot`, `ls`, `lcm`.
    pub strategy: Option<String>,
    pub noise_rate: Option<f64>,
    pub splits: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::Path(p) = &mut self.dataset {
            fix(p);
        }
        if let Some(p) = &mut self.groups {
            fix(p);
        }
        fix(&mut self.out);
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(kinds) = &o.strategy {
            self.strategies = kinds
                .split(',')
                .map(|k| match k.trim() {
                    "one-hot" => Ok(TargetStrategy::OneHot),
                    "ls" => Ok(TargetStrategy::LabelSmoothing { epsilon: o.epsilon.unwrap_or(0.1) }),
                    "lcm" => Ok(TargetStrategy::lcm(o.alpha.unwrap_or(DEFAULT_ALPHA))),
                    other => bail!("unknown strategy {other:?} (expected one-hot, ls or lcm)"),
                })
                .collect::<Result<_>>()?;
        }
        for s in &mut self.strategies {
            match s {
                TargetStrategy::Lcm { alpha, .. } => {
                    if let Some(a) = o.alpha {
                        *alpha = a;
                    }
                }
                TargetStrategy::LabelSmoothing { epsilon } => {
                    if let Some(e) = o.epsilon {
                        *epsilon = e;
                    }
                }
                TargetStrategy::OneHot => {}
            }
        }
        if let Some(r) = o.noise_rate {
            self.noise_rate = r;
        }
        if let Some(n) = o.splits {
            self.n_splits = n;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        Ok(())
    }

    /// Checks everything that can be checked without reading inputs.
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            bail!("at least one strategy is required");
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.strategies {
            s.validate().with_context(|| format!("strategy {s}"))?;
            if !names.insert(s.to_string()) {
                bail!("strategy {s} listed twice");
            }
        }
        if self.train.strategy != TargetStrategy::OneHot {
            bail!("train.strategy is not used here; list strategies under \"strategies\"");
        }
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.noise_rate) {
            bail!("noise_rate {} outside [0, 1]", self.noise_rate);
        }
        if self.n_splits < 2 {
            bail!("n_splits must be at least 2");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction {} outside (0, 1)", self.train_fraction);
        }
        if self.min_freq == 0 || self.max_vocab == Some(0) {
            bail!("min_freq and max_vocab must be positive");
        }
        match &self.dataset {
            DatasetSource::Generate(spec) => spec.validate()?,
            DatasetSource::Path(p) => {
                if !p.is_file() {
                    bail!("dataset file {} not found", p.display());
                }
            }
        }
        if self.noise_rate > 0.0 && self.groups.is_none() && matches!(self.dataset, DatasetSource::Path(_)) {
            bail!("noise_rate > 0 needs a groups file");
        }
        Ok(())
    }
}
