//! Subcommand implementations. Each returns the files it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lcm_core::data::{
    build_vocab, encode_corpus, generate_confused_corpus, inject_label_noise, label_names_of, read_jsonl,
    split_dataset, write_jsonl, Dataset, GroupMap, Input, RawRecord, Vocab,
};
use lcm_core::encoders::{encode_labels, Checkpoint, ModelParams, Predictor};
use lcm_core::eval::{
    accuracy, label_similarity_matrix, repeated_splits_eval, splits_csv, summary_csv, Arm, SplitProtocol,
    SplitReport,
};
use lcm_core::seed::derive_seed;
use lcm_core::targets::TargetStrategy;
use lcm_core::train::{train_run, TrainConfig};

use crate::config::{DatasetSource, ExperimentConfig};

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// File-name-safe form of a strategy name: `lcm(4,stop=10)` -> `lcm_4_stop_10`.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() || ch == '.' || ch == '-' {
            out.push(ch);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseAudit {
    pub rate: f64,
    pub seed: u64,
    pub eligible: usize,
    pub flipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub examples: usize,
    pub label_names: Vec<String>,
    pub label_counts: Vec<usize>,
    /// Including the two reserved ids; absent for feature inputs.
    pub vocab_size: Option<usize>,
}

/// Enough to re-run an experiment bit-identically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub dataset: DatasetSummary,
    pub noise: Option<NoiseAudit>,
    /// Digest of each split's training indices, shared by every strategy.
    pub split_hashes: Vec<String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

/// A dataset ready for training, with what is needed to describe it.
pub struct Prepared {
    pub dataset: Dataset,
    pub vocab: Option<Vocab>,
    pub groups: Option<GroupMap>,
    pub inputs: BTreeMap<String, String>,
    pub noise: Option<NoiseAudit>,
}

impl Prepared {
    fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            examples: self.dataset.len(),
            label_names: self.dataset.label_names.clone(),
            label_counts: self.dataset.label_counts(),
            vocab_size: self.vocab.as_ref().map(Vocab::len),
        }
    }
}

fn truncate(mut ds: Dataset, max_len: usize) -> Dataset {
    for e in &mut ds.examples {
        if let Input::Tokens { ids, len } = &mut e.input {
            if *len > max_len {
                ids.truncate(max_len);
                *len = max_len;
            }
        }
    }
    ds
}

fn eligible_count(ds: &Dataset, groups: &GroupMap) -> Result<usize> {
    let group_of = groups.group_of_classes(&ds.label_names)?;
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for g in &group_of {
        *sizes.entry(*g).or_default() += 1;
    }
    Ok(ds.examples.iter().filter(|e| sizes[&group_of[e.label]] >= 2).count())
}

/// Loads or generates the dataset, then injects label noise if asked.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let mut inputs = BTreeMap::new();
    let (dataset, vocab, mut groups) = match &cfg.dataset {
        DatasetSource::Generate(spec) => {
            let ds = truncate(generate_confused_corpus(spec)?, cfg.train.max_len);
            (ds, Some(spec.vocab()), Some(spec.group_map()))
        }
        DatasetSource::Path(path) => {
            inputs.insert(path.display().to_string(), file_digest(path)?);
            let records = read_jsonl(path)?;
            let names = cfg.label_names.clone().unwrap_or_else(|| label_names_of(&records));
            let texts: Vec<&str> = records.iter().filter_map(|r| r.text.as_deref()).collect();
            let vocab = if texts.is_empty() {
                None
            } else {
                Some(build_vocab(&texts, cfg.min_freq, cfg.max_vocab.unwrap_or(usize::MAX))?)
            };
            let empty = Vocab::from_tokens(std::iter::empty(), 1);
            let ds = encode_corpus(&records, vocab.as_ref().unwrap_or(&empty), &names, cfg.train.max_len)?;
            (ds, vocab, None)
        }
    };
    if let Some(path) = &cfg.groups {
        inputs.insert(path.display().to_string(), file_digest(path)?);
        groups = Some(GroupMap::load(path)?);
    }
    if dataset.num_classes() < 2 {
        bail!("dataset has {} label(s); at least 2 are needed", dataset.num_classes());
    }
    let mut prepared = Prepared { dataset, vocab, groups, inputs, noise: None };
    if cfg.noise_rate > 0.0 {
        let groups = prepared.groups.as_ref().context("noise injection needs a group map")?;
        let seed = derive_seed(cfg.seed, "noise", 0);
        let noisy = inject_label_noise(&prepared.dataset, groups, cfg.noise_rate, seed)?;
        let flipped = noisy.examples.iter().filter(|e| e.original_label.is_some()).count();
        prepared.noise = Some(NoiseAudit {
            rate: cfg.noise_rate,
            seed,
            eligible: eligible_count(&prepared.dataset, groups)?,
            flipped,
        });
        prepared.dataset = noisy;
    }
    Ok(prepared)
}

fn rel(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).display().to_string()
}

/// `gen-data`: writes `corpus.jsonl`, `groups.json` and a manifest.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let DatasetSource::Generate(spec) = &cfg.dataset else {
        bail!("gen-data needs a \"generate\" dataset source");
    };
    spec.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let ds = generate_confused_corpus(spec)?;
    let vocab = spec.vocab();
    let corpus = cfg.out.join("corpus.jsonl");
    write_jsonl(&corpus, &ds.to_records(Some(&vocab))?)?;
    let groups = cfg.out.join("groups.json");
    spec.group_map().save(&groups)?;
    let outputs = vec![corpus, groups];
    let manifest = Manifest {
        command: "gen-data".into(),
        config: cfg.clone(),
        seeds: [("generator".to_string(), spec.seed)].into(),
        inputs: BTreeMap::new(),
        dataset: DatasetSummary {
            examples: ds.len(),
            label_names: ds.label_names.clone(),
            label_counts: ds.label_counts(),
            vocab_size: Some(vocab.len()),
        },
        noise: None,
        split_hashes: Vec::new(),
        outputs: outputs.iter().map(|p| rel(&cfg.out, p)).collect(),
    };
    let m = manifest.write(&cfg.out)?;
    Ok(outputs.into_iter().chain([m]).collect())
}

/// `inject-noise`: flips `round(rate * eligible)` labels within their
/// groups. Writes the noisy corpus and `<output>.audit.csv` listing
/// `index,original,noisy` for every flip.
pub fn inject_noise(input: &Path, groups: &Path, rate: f64, seed: u64, output: &Path) -> Result<Vec<PathBuf>> {
    let records = read_jsonl(input)?;
    let groups = GroupMap::load(groups)?;
    let names = label_names_of(&records);
    // Only labels matter here, so inputs are replaced by placeholders.
    let placeholders: Vec<RawRecord> = records.iter().map(|r| RawRecord::features(vec![0.0], r.label.clone())).collect();
    let ds = encode_corpus(&placeholders, &Vocab::from_tokens(std::iter::empty(), 1), &names, 1)?;
    let noisy = inject_label_noise(&ds, &groups, rate, derive_seed(seed, "noise", 0))?;
    let mut out = records.clone();
    let mut audit = String::from("index,original,noisy\n");
    for (i, e) in noisy.examples.iter().enumerate() {
        if let Some(orig) = e.original_label {
            out[i].label = names[e.label].clone();
            audit.push_str(&format!("{i},{},{}\n", names[orig], names[e.label]));
        }
    }
    if let Some(dir) = output.parent() {
        fs::create_dir_all(dir)?;
    }
    write_jsonl(output, &out)?;
    let audit_path = output.with_extension("audit.csv");
    fs::write(&audit_path, audit)?;
    Ok(vec![output.to_path_buf(), audit_path])
}

/// Label names and encoding settings saved next to a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub label_names: Vec<String>,
    pub max_len: usize,
}

/// `train`: one run per strategy on the first split. Each strategy gets a
/// directory with its history, full checkpoint, predictor-only checkpoint
/// and (for LCM) label similarities.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let split_seed = derive_seed(cfg.seed, "splits", 0);
    let (train_set, test_set) = split_dataset(&prepared.dataset, cfg.train_fraction, split_seed)?;
    fs::create_dir_all(&cfg.out)?;
    let mut written = Vec::new();
    if let Some(v) = &prepared.vocab {
        let p = cfg.out.join("vocab.json");
        v.save(&p)?;
        written.push(p);
    }
    let meta = ModelMeta { label_names: prepared.dataset.label_names.clone(), max_len: cfg.train.max_len };
    let meta_path = cfg.out.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
    written.push(meta_path);

    for strategy in &cfg.strategies {
        let dir = cfg.out.join(slug(&strategy.to_string()));
        fs::create_dir_all(&dir)?;
        let config = TrainConfig { strategy: strategy.clone(), seed: split_seed, ..cfg.train.clone() };
        let (params, history) = train_run(&train_set, &test_set, &config)?;
        let files = [dir.join("history.csv"), dir.join("model.json"), dir.join("predictor.json")];
        history.write_csv(&files[0])?;
        params.to_checkpoint().save(&files[1])?;
        params.predictor().to_checkpoint().save(&files[2])?;
        written.extend(files);
        if matches!(strategy, TargetStrategy::Lcm { .. }) {
            let p = dir.join("labelsim.csv");
            let labels = encode_labels(params.num_classes(), &params.label)?;
            label_similarity_matrix(&labels, &prepared.dataset.label_names)?.write_csv(&p)?;
            written.push(p);
        }
        if let Some(acc) = history.records.last().and_then(|r| r.test_acc) {
            println!("{strategy}: test accuracy {acc:.4}");
        }
    }
    let manifest = Manifest {
        command: "train".into(),
        config: cfg.clone(),
        seeds: run_seeds(cfg, &[split_seed]),
        inputs: prepared.inputs.clone(),
        dataset: prepared.summary(),
        noise: prepared.noise.clone(),
        split_hashes: Vec::new(),
        outputs: written.iter().map(|p| rel(&cfg.out, p)).collect(),
    };
    written.push(manifest.write(&cfg.out)?);
    Ok(written)
}

fn run_seeds(cfg: &ExperimentConfig, splits: &[u64]) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::from([("top".to_string(), cfg.seed)]);
    if cfg.noise_rate > 0.0 {
        seeds.insert("noise".into(), derive_seed(cfg.seed, "noise", 0));
    }
    for (i, s) in splits.iter().enumerate() {
        seeds.insert(format!("split{i:02}"), *s);
    }
    seeds
}

/// Result of `eval-splits`.
pub struct RunOutcome {
    pub reports: Vec<SplitReport>,
    pub files: Vec<PathBuf>,
}

/// `eval-splits`: every strategy on `n_splits` shared-seed splits. Writes
/// `splits.csv`, per-run histories, LCM label similarities, the manifest,
/// and finally `summary.csv`. A stale summary is removed first so a failed
/// run never leaves one behind.
pub fn eval_splits(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let summary_path = cfg.out.join("summary.csv");
    if summary_path.exists() {
        fs::remove_file(&summary_path)?;
    }
    let prepared = prepare(cfg)?;
    let protocol = SplitProtocol {
        n_splits: cfg.n_splits,
        base_seed: derive_seed(cfg.seed, "splits", 0),
        train_fraction: cfg.train_fraction,
        jobs: cfg.jobs,
    };
    let arms: Vec<Arm> = cfg
        .strategies
        .iter()
        .map(|s| Arm::new(TrainConfig { strategy: s.clone(), ..cfg.train.clone() }))
        .collect();
    let reports = repeated_splits_eval(&prepared.dataset, &arms, &protocol)?;

    let mut files = Vec::new();
    let splits_path = cfg.out.join("splits.csv");
    fs::write(&splits_path, splits_csv(&reports))?;
    files.push(splits_path);
    let hist_dir = cfg.out.join("histories");
    fs::create_dir_all(&hist_dir)?;
    for (arm, report) in arms.iter().zip(&reports) {
        let name = slug(&report.strategy);
        for run in &report.runs {
            let p = hist_dir.join(format!("{name}-split{:02}.csv", run.split_index));
            run.history.write_csv(&p)?;
            files.push(p);
        }
        if matches!(arm.config.strategy, TargetStrategy::Lcm { .. }) {
            let sim_dir = cfg.out.join("labelsim");
            fs::create_dir_all(&sim_dir)?;
            for (run, labels) in report.runs.iter().zip(report.label_representations()?) {
                let p = sim_dir.join(format!("{name}-split{:02}.csv", run.split_index));
                label_similarity_matrix(&labels, &prepared.dataset.label_names)?.write_csv(&p)?;
                files.push(p);
            }
        }
    }
    let split_seeds: Vec<u64> = (0..cfg.n_splits).map(|i| protocol.split_seed(i)).collect();
    let manifest = Manifest {
        command: "eval-splits".into(),
        config: cfg.clone(),
        seeds: run_seeds(cfg, &split_seeds),
        inputs: prepared.inputs.clone(),
        dataset: prepared.summary(),
        noise: prepared.noise.clone(),
        split_hashes: reports[0].runs.iter().map(|r| r.split_hash.clone()).collect(),
        outputs: files.iter().chain([&summary_path]).map(|p| rel(&cfg.out, p)).collect(),
    };
    files.push(manifest.write(&cfg.out)?);
    fs::write(&summary_path, summary_csv(&reports))?;
    files.push(summary_path);
    Ok(RunOutcome { reports, files })
}

/// `export-labelsim`: cosine similarities of a checkpoint's label
/// representations.
pub fn export_labelsim(checkpoint: &Path, meta: &Path, output: &Path) -> Result<PathBuf> {
    let params = ModelParams::from_checkpoint(&Checkpoint::load(checkpoint)?)
        .with_context(|| format!("{} lacks label-encoder parameters", checkpoint.display()))?;
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(meta)?)?;
    let labels = encode_labels(params.num_classes(), &params.label)?;
    label_similarity_matrix(&labels, &meta.label_names)?.write_csv(output)?;
    Ok(output.to_path_buf())
}

/// `predict`: labels a JSON-lines corpus with a predictor-only checkpoint.
/// Writes `index,predicted,label` rows and returns the accuracy against the
/// file's labels.
pub fn predict(model: &Path, meta: &Path, vocab: Option<&Path>, input: &Path, output: &Path) -> Result<f64> {
    let predictor = Predictor::from_checkpoint(&Checkpoint::load(model)?)?;
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(meta)?)?;
    let vocab = match vocab {
        Some(p) => Vocab::load(p)?,
        None => Vocab::from_tokens(std::iter::empty(), 1),
    };
    let records = read_jsonl(input)?;
    let ds = encode_corpus(&records, &vocab, &meta.label_names, meta.max_len)?;
    let preds = predictor.predict(&ds.examples)?;
    let mut csv = String::from("index,predicted,label\n");
    for (i, (p, e)) in preds.iter().zip(&ds.examples).enumerate() {
        csv.push_str(&format!("{i},{},{}\n", meta.label_names[*p], meta.label_names[e.label]));
    }
    fs::write(output, csv)?;
    Ok(accuracy(&preds, &ds.labels())?)
}
