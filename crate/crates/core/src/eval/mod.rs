//! Accuracy, the repeated-split protocol, significance testing and label
//! representation diagnostics.

mod similarity;
mod stats;

pub use similarity::{label_similarity_matrix, SimilarityMatrix};
pub use stats::{
    ln_gamma, mean, regularized_incomplete_beta, std_dev, student_t_two_sided, variance, welch_t_test,
    WelchOutcome,
};

use std::fmt::Write as _;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{split_indices, Dataset};
use crate::encoders::{encode_labels, ModelParams};
use crate::error::{invalid, Result};
use crate::train::{train_run, TrainConfig, TrainHistory};

/// Fraction of positions where `predictions` equals `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(invalid(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(invalid("accuracy of an empty set"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// One named configuration taking part in a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    pub config: TrainConfig,
}

impl Arm {
    /// Named after its target strategy.
    pub fn new(config: TrainConfig) -> Self {
        Self { name: config.strategy.to_string(), config }
    }
}

/// Protocol settings shared by every arm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitProtocol {
    pub n_splits: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}

impl Default for SplitProtocol {
    fn default() -> Self {
        Self { n_splits: 10, base_seed: 0, train_fraction: 0.7, jobs: 0 }
    }
}

impl SplitProtocol {
    pub fn split_seed(&self, split: usize) -> u64 {
        self.base_seed.wrapping_add(split as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitRun {
    pub split_index: usize,
    pub seed: u64,
    /// Digest of the training indices, equal across arms for a split.
    pub split_hash: String,
    pub test_accuracy: f64,
    pub history: TrainHistory,
    pub params: ModelParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub outcome: WelchOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitReport {
    pub strategy: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Welch test against the first arm; absent on the baseline itself.
    pub comparison: Option<Comparison>,
    pub runs: Vec<SplitRun>,
}

impl SplitReport {
    /// Final label representations of each run (LCM arms are the ones
    /// where these are trained).
    pub fn label_representations(&self) -> Result<Vec<crate::autodiff::Tensor>> {
        self.runs.iter().map(|r| encode_labels(r.params.num_classes(), &r.params.label)).collect()
    }
}

fn split_hash(indices: &[usize]) -> String {
    let mut h = Sha256::new();
    for i in indices {
        h.update((*i as u64).to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Trains every arm once per split. Split `i` uses seed `base_seed + i`
/// for the partition and as the training seed of every arm, so arms differ
/// only in their configuration. Reports carry Welch p-values against the
/// first arm.
pub fn repeated_splits_eval(dataset: &Dataset, arms: &[Arm], protocol: &SplitProtocol) -> Result<Vec<SplitReport>> {
    if protocol.n_splits < 2 {
        return Err(invalid("repeated splits need n_splits >= 2"));
    }
    if arms.is_empty() {
        return Err(invalid("no arms to evaluate"));
    }
    for arm in arms {
        arm.config.validate()?;
    }
    let splits: Vec<(u64, Vec<usize>, Vec<usize>)> = (0..protocol.n_splits)
        .map(|i| {
            let seed = protocol.split_seed(i);
            split_indices(dataset.len(), protocol.train_fraction, seed).map(|(tr, te)| (seed, tr, te))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> =
        (0..arms.len()).flat_map(|a| (0..protocol.n_splits).map(move |s| (a, s))).collect();
    let run_one = |&(a, s): &(usize, usize)| -> Result<SplitRun> {
        let (seed, tr, te) = &splits[s];
        let train = dataset.subset(tr);
        let test = dataset.subset(te);
        let config = TrainConfig { seed: *seed, ..arms[a].config.clone() };
        let (params, history) = train_run(&train, &test, &config)?;
        let test_accuracy = history.records.last().and_then(|r| r.test_acc).expect("test split is non-empty");
        Ok(SplitRun { split_index: s, seed: *seed, split_hash: split_hash(tr), test_accuracy, history, params })
    };
    let results: Vec<Result<SplitRun>> = if protocol.jobs == 0 {
        jobs.par_iter().map(run_one).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(protocol.jobs)
            .build()
            .map_err(|e| invalid(e.to_string()))?
            .install(|| jobs.par_iter().map(run_one).collect())
    };
    let mut results = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter();

    let mut reports: Vec<SplitReport> = arms
        .iter()
        .map(|arm| {
            let runs: Vec<SplitRun> = results.by_ref().take(protocol.n_splits).collect();
            let accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
            SplitReport {
                strategy: arm.name.clone(),
                mean: mean(&accuracies),
                std: std_dev(&accuracies),
                accuracies,
                comparison: None,
                runs,
            }
        })
        .collect();
    let baseline = reports[0].accuracies.clone();
    let baseline_name = reports[0].strategy.clone();
    for r in reports.iter_mut().skip(1) {
        r.comparison = Some(Comparison { baseline: baseline_name.clone(), outcome: welch_t_test(&r.accuracies, &baseline)? });
    }
    Ok(reports)
}

/// `strategy,split_index,seed,test_accuracy`
pub fn splits_csv(reports: &[SplitReport]) -> String {
    let mut s = String::from("strategy,split_index,seed,test_accuracy\n");
    for r in reports {
        for run in &r.runs {
            let _ = writeln!(s, "{},{},{},{}", r.strategy, run.split_index, run.seed, run.test_accuracy);
        }
    }
    s
}

/// `strategy,mean,std,p_vs_baseline`; the baseline row leaves the p-value
/// empty and constant identical samples print `identical`.
pub fn summary_csv(reports: &[SplitReport]) -> String {
    let mut s = String::from("strategy,mean,std,p_vs_baseline\n");
    for r in reports {
        let p = match &r.comparison {
            None => String::new(),
            Some(Comparison { outcome: WelchOutcome::Identical, .. }) => "identical".into(),
            Some(Comparison { outcome, .. }) => outcome.p_value().to_string(),
        };
        let _ = writeln!(s, "{},{},{},{}", r.strategy, r.mean, r.std, p);
    }
    s
}
