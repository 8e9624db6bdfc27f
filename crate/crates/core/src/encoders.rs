//! Input encoder, label encoder and softmax classifier.
//!
//! Text: embedding gather over the true length, mean pool, then one tanh
//! layer. Feature vectors skip the embedding and go straight through the
//! tanh layer. Labels: embedding row per class followed by a tanh layer.
//! Row-vector convention throughout (`x W + b`).

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::data::{Example, Input, InputKind};
use crate::error::{invalid, LcmError, Result};
use crate::seed::rng_for;
use crate::targets::LcmHeadParams;

pub const TEXT_EMBEDDING: &str = "text.embedding";
pub const TEXT_WEIGHT: &str = "text.hidden.weight";
pub const TEXT_BIAS: &str = "text.hidden.bias";
pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";
pub const LABEL_EMBEDDING: &str = "label.embedding";
pub const LABEL_WEIGHT: &str = "label.hidden.weight";
pub const LABEL_BIAS: &str = "label.hidden.bias";
pub const HEAD_WEIGHT: &str = "lcm.weight";
pub const HEAD_BIAS: &str = "lcm.bias";

/// Uniform in [-0.05, 0.05].
pub fn init_embedding(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = rng_for(seed, "init-embedding", (rows * 31 + cols) as u64);
    let data = (0..rows * cols).map(|_| rng.gen_range(-0.05..=0.05)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

/// Scaled uniform with bound `sqrt(6 / (fan_in + fan_out))`.
pub fn init_dense(fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = rng_for(seed, "init-dense", (fan_in * 31 + fan_out) as u64);
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive dims")
}

/// Whether bound parameters receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bind {
    Trainable,
    Frozen,
}

pub(crate) fn bind(tape: &mut Tape, mode: Bind, name: &str, t: &Tensor) -> NodeId {
    match mode {
        Bind::Trainable => tape.param(name, t.clone()),
        Bind::Frozen => tape.constant(t.clone()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderParams {
    /// `|V| x e`; absent for feature-vector inputs.
    pub embedding: Option<Tensor>,
    /// `e x d` (or `features x d`).
    pub hidden_weight: Tensor,
    pub hidden_bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct TextNodes {
    embedding: Option<NodeId>,
    weight: NodeId,
    bias: NodeId,
}

impl TextEncoderParams {
    pub fn init(kind: InputKind, dim: usize, seed: u64) -> Self {
        let (embedding, fan_in) = match kind {
            InputKind::Tokens { vocab_size } => (Some(init_embedding(vocab_size, dim, seed)), dim),
            InputKind::Features { dim: f } => (None, f),
        };
        Self::with_embedding(embedding, fan_in, dim, seed)
    }

    /// Uses a given (e.g. pre-trained) embedding table.
    pub fn with_embedding(embedding: Option<Tensor>, fan_in: usize, dim: usize, seed: u64) -> Self {
        let fan_in = embedding.as_ref().map_or(fan_in, |e| e.shape()[1]);
        Self {
            embedding,
            hidden_weight: init_dense(fan_in, dim, seed ^ 0x7e57),
            hidden_bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn bind(&self, tape: &mut Tape, mode: Bind) -> TextNodes {
        TextNodes {
            embedding: self.embedding.as_ref().map(|e| bind(tape, mode, TEXT_EMBEDDING, e)),
            weight: bind(tape, mode, TEXT_WEIGHT, &self.hidden_weight),
            bias: bind(tape, mode, TEXT_BIAS, &self.hidden_bias),
        }
    }

    /// Records `v_i` for a batch; returns a `[B, d]` node.
    pub fn record(&self, tape: &mut Tape, nodes: TextNodes, batch: &[&Example]) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(LcmError::EmptyInput("empty batch".into()));
        }
        let pooled = match (&batch[0].input, nodes.embedding) {
            (Input::Tokens { .. }, Some(emb)) => {
                let mut rows = Vec::new();
                let mut lens = Vec::with_capacity(batch.len());
                for ex in batch {
                    let ids = ex
                        .input
                        .token_ids()
                        .ok_or_else(|| invalid("mixed token and feature inputs in one batch"))?;
                    if ids.is_empty() {
                        return Err(LcmError::EmptyInput("token sequence of length 0".into()));
                    }
                    rows.extend(ids.iter().map(|&i| i as usize));
                    lens.push(ids.len());
                }
                let gathered = tape.gather(emb, rows)?;
                tape.segment_mean(gathered, lens)?
            }
            (Input::Features(first), None) => {
                let f = first.len();
                let mut data = Vec::with_capacity(batch.len() * f);
                for ex in batch {
                    match &ex.input {
                        Input::Features(v) if v.len() == f => data.extend_from_slice(v),
                        Input::Features(v) => {
                            return Err(LcmError::Shape {
                                primitive: "encode_text",
                                detail: format!("feature length {} vs {f}", v.len()),
                            })
                        }
                        Input::Tokens { .. } => return Err(invalid("mixed token and feature inputs in one batch")),
                    }
                }
                if f == 0 {
                    return Err(LcmError::EmptyInput("feature vector of length 0".into()));
                }
                tape.constant(Tensor::matrix(batch.len(), f, data)?)
            }
            (Input::Tokens { .. }, None) => return Err(invalid("token input but encoder has no embedding")),
            (Input::Features(_), Some(_)) => return Err(invalid("feature input but encoder expects tokens")),
        };
        let h = tape.matmul(pooled, nodes.weight)?;
        let h = tape.add_bias(h, nodes.bias)?;
        tape.tanh(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelEncoderParams {
    /// `C x d`; row `k` is class `k`.
    pub embedding: Tensor,
    pub hidden_weight: Tensor,
    pub hidden_bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LabelNodes {
    embedding: NodeId,
    weight: NodeId,
    bias: NodeId,
}

impl LabelEncoderParams {
    pub fn init(num_classes: usize, dim: usize, seed: u64) -> Self {
        Self {
            embedding: init_embedding(num_classes, dim, seed ^ 0x1abe1),
            hidden_weight: init_dense(dim, dim, seed ^ 0x1abe1),
            hidden_bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, mode: Bind) -> LabelNodes {
        LabelNodes {
            embedding: bind(tape, mode, LABEL_EMBEDDING, &self.embedding),
            weight: bind(tape, mode, LABEL_WEIGHT, &self.hidden_weight),
            bias: bind(tape, mode, LABEL_BIAS, &self.hidden_bias),
        }
    }

    /// Records `V_l` (`[C, d]`), row order = class order.
    pub fn record(&self, tape: &mut Tape, nodes: LabelNodes) -> Result<NodeId> {
        let h = tape.matmul(nodes.embedding, nodes.weight)?;
        let h = tape.add_bias(h, nodes.bias)?;
        tape.tanh(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `d x C`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierNodes {
    weight: NodeId,
    bias: NodeId,
}

impl ClassifierParams {
    pub fn init(dim: usize, num_classes: usize, seed: u64) -> Self {
        Self { weight: init_dense(dim, num_classes, seed ^ 0xc1a55), bias: Tensor::zeros(&[num_classes]) }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn bind(&self, tape: &mut Tape, mode: Bind) -> ClassifierNodes {
        ClassifierNodes {
            weight: bind(tape, mode, CLASSIFIER_WEIGHT, &self.weight),
            bias: bind(tape, mode, CLASSIFIER_BIAS, &self.bias),
        }
    }

    /// Records the PLD `softmax(v W + b)` for `[B, d]` representations.
    pub fn record(&self, tape: &mut Tape, nodes: ClassifierNodes, v: NodeId) -> Result<NodeId> {
        let logits = tape.matmul(v, nodes.weight)?;
        let logits = tape.add_bias(logits, nodes.bias)?;
        tape.softmax(logits)
    }
}

/// `v_i` for one example.
pub fn encode_text(example: &Example, params: &TextEncoderParams) -> Result<Vec<f64>> {
    Ok(encode_text_batch(&[example], params)?.into_data())
}

pub fn encode_text_batch(batch: &[&Example], params: &TextEncoderParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes = params.bind(&mut tape, Bind::Frozen);
    let v = params.record(&mut tape, nodes, batch)?;
    Ok(tape.value(v).clone())
}

/// Label representation matrix `V_l`, `C x d`.
pub fn encode_labels(num_classes: usize, params: &LabelEncoderParams) -> Result<Tensor> {
    if num_classes < 2 {
        return Err(invalid(format!("need at least 2 classes, got {num_classes}")));
    }
    if params.num_classes() != num_classes {
        return Err(invalid(format!(
            "label encoder holds {} classes, asked for {num_classes}",
            params.num_classes()
        )));
    }
    let mut tape = Tape::new();
    let nodes = params.bind(&mut tape, Bind::Frozen);
    let v = params.record(&mut tape, nodes)?;
    Ok(tape.value(v).clone())
}

/// PLD `y_p` for one representation.
pub fn predict_distribution(v_i: &[f64], params: &ClassifierParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let nodes = params.bind(&mut tape, Bind::Frozen);
    let v = tape.constant(Tensor::matrix(1, v_i.len(), v_i.to_vec())?);
    let p = params.record(&mut tape, nodes, v)?;
    Ok(tape.value(p).clone().into_data())
}

/// Flat `{name: {shape, data}}` parameter document. `f64` values are
/// written in shortest round-trip form, so save/load is bit-exact.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Checkpoint(pub BTreeMap<String, Tensor>);

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn take(&self, name: &str) -> Result<Tensor> {
        self.0.get(name).cloned().ok_or_else(|| LcmError::MissingParameter(name.to_string()))
    }
}

/// The inference path: input encoder plus classifier, nothing else.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub text: TextEncoderParams,
    pub classifier: ClassifierParams,
}

impl Predictor {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text = TextEncoderParams {
            embedding: ck.0.get(TEXT_EMBEDDING).cloned(),
            hidden_weight: ck.take(TEXT_WEIGHT)?,
            hidden_bias: ck.take(TEXT_BIAS)?,
        };
        let classifier = ClassifierParams { weight: ck.take(CLASSIFIER_WEIGHT)?, bias: ck.take(CLASSIFIER_BIAS)? };
        if text.dim() != classifier.weight.shape()[0] {
            return Err(invalid("encoder and classifier dimensions disagree"));
        }
        Ok(Self { text, classifier })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut m = BTreeMap::new();
        if let Some(e) = &self.text.embedding {
            m.insert(TEXT_EMBEDDING.to_string(), e.clone());
        }
        m.insert(TEXT_WEIGHT.to_string(), self.text.hidden_weight.clone());
        m.insert(TEXT_BIAS.to_string(), self.text.hidden_bias.clone());
        m.insert(CLASSIFIER_WEIGHT.to_string(), self.classifier.weight.clone());
        m.insert(CLASSIFIER_BIAS.to_string(), self.classifier.bias.clone());
        Checkpoint(m)
    }

    /// PLD rows for a batch of examples.
    pub fn predict_batch(&self, batch: &[&Example]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let t = self.text.bind(&mut tape, Bind::Frozen);
        let c = self.classifier.bind(&mut tape, Bind::Frozen);
        let v = self.text.record(&mut tape, t, batch)?;
        let p = self.classifier.record(&mut tape, c, v)?;
        Ok(tape.value(p).clone())
    }

    /// Argmax class for every example, processed in chunks.
    pub fn predict(&self, examples: &[Example]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(512) {
            let refs: Vec<&Example> = chunk.iter().collect();
            let probs = self.predict_batch(&refs)?;
            out.extend(probs.rows().map(argmax));
        }
        Ok(out)
    }
}

/// Index of the largest entry (first on ties).
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Every trainable tensor of an LCM-equipped classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub text: TextEncoderParams,
    pub classifier: ClassifierParams,
    pub label: LabelEncoderParams,
    pub head: LcmHeadParams,
}

impl ModelParams {
    /// Seeded initialization. The predictor and the LCM parts draw from
    /// separate streams, so the predictor's initial weights are the same
    /// whichever target strategy is trained.
    pub fn init(kind: InputKind, num_classes: usize, dim: usize, seed: u64) -> Self {
        let pred_seed = crate::seed::derive_seed(seed, "init-predictor", 0);
        let lcm_seed = crate::seed::derive_seed(seed, "init-lcm", 0);
        Self {
            text: TextEncoderParams::init(kind, dim, pred_seed),
            classifier: ClassifierParams::init(dim, num_classes, pred_seed),
            label: LabelEncoderParams::init(num_classes, dim, lcm_seed),
            head: LcmHeadParams::init(num_classes, lcm_seed),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn predictor(&self) -> Predictor {
        Predictor { text: self.text.clone(), classifier: self.classifier.clone() }
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = Vec::with_capacity(10);
        if let Some(e) = &self.text.embedding {
            v.push((TEXT_EMBEDDING, e));
        }
        v.extend([
            (TEXT_WEIGHT, &self.text.hidden_weight),
            (TEXT_BIAS, &self.text.hidden_bias),
            (CLASSIFIER_WEIGHT, &self.classifier.weight),
            (CLASSIFIER_BIAS, &self.classifier.bias),
            (LABEL_EMBEDDING, &self.label.embedding),
            (LABEL_WEIGHT, &self.label.hidden_weight),
            (LABEL_BIAS, &self.label.hidden_bias),
            (HEAD_WEIGHT, &self.head.weight),
            (HEAD_BIAS, &self.head.bias),
        ]);
        v
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v = Vec::with_capacity(10);
        if let Some(e) = &mut self.text.embedding {
            v.push((TEXT_EMBEDDING, e));
        }
        v.extend([
            (TEXT_WEIGHT, &mut self.text.hidden_weight),
            (TEXT_BIAS, &mut self.text.hidden_bias),
            (CLASSIFIER_WEIGHT, &mut self.classifier.weight),
            (CLASSIFIER_BIAS, &mut self.classifier.bias),
            (LABEL_EMBEDDING, &mut self.label.embedding),
            (LABEL_WEIGHT, &mut self.label.hidden_weight),
            (LABEL_BIAS, &mut self.label.hidden_bias),
            (HEAD_WEIGHT, &mut self.head.weight),
            (HEAD_BIAS, &mut self.head.bias),
        ]);
        v
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint(self.named().into_iter().map(|(n, t)| (n.to_string(), t.clone())).collect())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let p = Predictor::from_checkpoint(ck)?;
        Ok(Self {
            text: p.text,
            classifier: p.classifier,
            label: LabelEncoderParams {
                embedding: ck.take(LABEL_EMBEDDING)?,
                hidden_weight: ck.take(LABEL_WEIGHT)?,
                hidden_bias: ck.take(LABEL_BIAS)?,
            },
            head: LcmHeadParams { weight: ck.take(HEAD_WEIGHT)?, bias: ck.take(HEAD_BIAS)? },
        })
    }
}
