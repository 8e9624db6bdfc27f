//! Mini-batch training with Adam and the LCM early-stop schedule.

mod adam;

pub use adam::{AdamConfig, AdamState};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::data::{Dataset, Example};
use crate::encoders::{argmax, Bind, Checkpoint, ModelParams};
use crate::error::{invalid, Result};
use crate::eval::accuracy;
use crate::seed::rng_for;
use crate::targets::{label_smoothing_target, one_hot_target, record_sld, TargetStrategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub strategy: TargetStrategy,
    /// Representation size `d` (embedding and hidden).
    pub dim: usize,
    /// Token sequence cap applied when encoding text.
    pub max_len: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            strategy: TargetStrategy::OneHot,
            dim: 64,
            max_len: 256,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.dim == 0 || self.max_len == 0 {
            return Err(invalid("dim and max_len must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(invalid("adam betas must lie in [0, 1) and eps must be positive"));
        }
        self.strategy.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

/// Everything needed to continue a run bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Index of the next epoch to run.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        Self { params, adam: AdamState::new(), epoch: 0 }
    }

    /// Fresh seeded model for `dataset`'s input kind and class count.
    pub fn init(dataset: &Dataset, config: &TrainConfig) -> Self {
        Self::new(ModelParams::init(dataset.kind, dataset.num_classes(), config.dim, config.seed))
    }

    /// Writes parameters, optimizer moments and the epoch counter as JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = StateDoc { epoch: self.epoch, params: self.params.to_checkpoint(), adam: self.adam.clone() };
        std::fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: StateDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self { params: ModelParams::from_checkpoint(&doc.params)?, adam: doc.adam, epoch: doc.epoch })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDoc {
    epoch: usize,
    params: Checkpoint,
    adam: AdamState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub lcm_active: bool,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `epoch,train_loss,train_acc,test_acc,lcm_active`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,test_acc,lcm_active\n");
        for r in &self.records {
            let test = r.test_acc.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, test, r.lcm_active);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Target rows for a batch that does not use the SLD.
fn fixed_targets(strategy: &TargetStrategy, batch: &[&Example], num_classes: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch.len() * num_classes);
    for ex in batch {
        let t = match *strategy {
            TargetStrategy::LabelSmoothing { epsilon } => label_smoothing_target(ex.label, num_classes, epsilon)?,
            _ => one_hot_target(ex.label, num_classes)?,
        };
        data.extend(t.values);
    }
    Tensor::matrix(batch.len(), num_classes, data)
}

/// Records the full training loss for one batch and returns
/// `(loss, predicted distribution)` nodes.
pub fn record_batch_loss(
    tape: &mut Tape,
    params: &ModelParams,
    strategy: &TargetStrategy,
    batch: &[&Example],
    epoch: usize,
) -> Result<(NodeId, NodeId)> {
    let c = params.num_classes();
    let text = params.text.bind(tape, Bind::Trainable);
    let cls = params.classifier.bind(tape, Bind::Trainable);
    let v = params.text.record(tape, text, batch)?;
    let predicted = params.classifier.record(tape, cls, v)?;

    let target = match *strategy {
        TargetStrategy::Lcm { alpha, detach_target, .. } if strategy.lcm_active(epoch) => {
            let label_nodes = params.label.bind(tape, Bind::Trainable);
            let head_nodes = params.head.bind(tape, Bind::Trainable);
            let labels = params.label.record(tape, label_nodes)?;
            let lcd = params.head.record(tape, head_nodes, v, labels)?;
            let hot = tape.constant(fixed_targets(&TargetStrategy::OneHot, batch, c)?);
            let sld = record_sld(tape, hot, lcd, alpha)?;
            if detach_target {
                tape.detach(sld)
            } else {
                sld
            }
        }
        _ => tape.constant(fixed_targets(strategy, batch, c)?),
    };
    let loss = tape.kl_divergence(target, predicted)?;
    Ok((loss, predicted))
}

fn check_dataset(ds: &Dataset, num_classes: usize, what: &str) -> Result<()> {
    if ds.num_classes() != num_classes {
        return Err(invalid(format!("{what} split has {} classes, model has {num_classes}", ds.num_classes())));
    }
    ds.check_labels().map_err(|e| invalid(format!("{what} split: {e}")))
}

/// One pass over `dataset` in a seeded order (derived from the run seed and
/// the epoch index). Every batch, including a final partial one, takes one
/// Adam step. Advances `state.epoch`.
pub fn train_epoch(state: &mut TrainState, dataset: &Dataset, config: &TrainConfig) -> Result<EpochRecord> {
    if dataset.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    let epoch = state.epoch;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_for(config.seed, "shuffle", epoch as u64));
    let adam = config.adam();

    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(order.len());
    let mut labels = Vec::with_capacity(order.len());
    let mut steps = 0;
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<&Example> = chunk.iter().map(|&i| &dataset.examples[i]).collect();
        let mut tape = Tape::new();
        let (loss, predicted) = record_batch_loss(&mut tape, &state.params, &config.strategy, &batch, epoch)?;
        let grads = tape.backprop(loss)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(invalid(format!("non-finite loss at epoch {epoch}, step {steps}")));
        }
        loss_sum += value * batch.len() as f64;
        predictions.extend(tape.value(predicted).rows().map(argmax));
        labels.extend(batch.iter().map(|e| e.label));
        state.adam.update(state.params.named_mut(), &grads, &adam)?;
        steps += 1;
    }
    state.epoch += 1;
    Ok(EpochRecord {
        epoch,
        train_loss: loss_sum / dataset.len() as f64,
        train_acc: accuracy(&predictions, &labels)?,
        test_acc: None,
        lcm_active: config.strategy.lcm_active(epoch),
        steps,
    })
}

/// Test accuracy from the predictor alone (no LCM parameters involved).
pub fn evaluate(params: &ModelParams, test: &Dataset) -> Result<f64> {
    let preds = params.predictor().predict(&test.examples)?;
    accuracy(&preds, &test.labels())
}

/// Continues `state` until `config.epochs` epochs have run, evaluating on
/// `test` (when non-empty) after each one.
pub fn train_run_from(
    mut state: TrainState,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
) -> Result<(TrainState, TrainHistory)> {
    config.validate()?;
    let c = state.params.num_classes();
    check_dataset(train, c, "train")?;
    if !test.is_empty() {
        check_dataset(test, c, "test")?;
    }
    let mut history = TrainHistory::default();
    while state.epoch < config.epochs {
        let mut record = train_epoch(&mut state, train, config)?;
        if !test.is_empty() {
            record.test_acc = Some(evaluate(&state.params, test)?);
        }
        history.records.push(record);
    }
    Ok((state, history))
}

/// Trains a freshly initialized model for `config.epochs` epochs.
pub fn train_run(train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if train.num_classes() < 2 {
        return Err(invalid("need at least 2 classes"));
    }
    let (state, history) = train_run_from(TrainState::init(train, config), train, test, config)?;
    Ok((state.params, history))
}
