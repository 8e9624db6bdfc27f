//! Training targets: one-hot, label smoothing, and the label confusion
//! model's simulated label distribution.
//!
//! For an instance representation `v` (length `d`) and label matrix `V_l`
//! (`C x d`) the similarities are `s = V_l v`. The label confusion
//! distribution is `y_c = softmax(s W + b)` with a `C x C` head `W`, and the
//! simulated label distribution is `y_s = softmax(alpha * y_t + y_c)` for
//! one-hot `y_t`. Training minimises `KL(y_s || y_p)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{kl_divergence, softmax, NodeId, Tape, Tensor};
use crate::encoders::{bind, init_dense, Bind, HEAD_BIAS, HEAD_WEIGHT};
use crate::error::{invalid, LcmError, Result};

pub const DEFAULT_ALPHA: f64 = 4.0;
pub const MIN_ALPHA: f64 = 0.5;

/// Similarity-to-LCD projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LcmHeadParams {
    /// `C x C`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadNodes {
    weight: NodeId,
    bias: NodeId,
}

impl LcmHeadParams {
    pub fn init(num_classes: usize, seed: u64) -> Self {
        Self { weight: init_dense(num_classes, num_classes, seed ^ 0x4ead), bias: Tensor::zeros(&[num_classes]) }
    }

    pub fn bind(&self, tape: &mut Tape, mode: Bind) -> HeadNodes {
        HeadNodes { weight: bind(tape, mode, HEAD_WEIGHT, &self.weight), bias: bind(tape, mode, HEAD_BIAS, &self.bias) }
    }

    /// Records the LCD for `[B, d]` representations and `[C, d]` labels.
    pub fn record(&self, tape: &mut Tape, nodes: HeadNodes, v: NodeId, labels: NodeId) -> Result<NodeId> {
        let lt = tape.transpose(labels)?;
        let sim = tape.matmul(v, lt)?;
        let z = tape.matmul(sim, nodes.weight)?;
        let z = tape.add_bias(z, nodes.bias)?;
        tape.softmax(z)
    }
}

/// How training targets are built from the gold label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetStrategy {
    OneHot,
    LabelSmoothing {
        epsilon: f64,
    },
    Lcm {
        #[serde(default = "default_alpha")]
        alpha: f64,
        /// First epoch (0-based) trained on plain one-hot targets.
        #[serde(default)]
        stop_epoch: Option<usize>,
        /// Treat the SLD as a constant in the loss.
        #[serde(default)]
        detach_target: bool,
    },
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl TargetStrategy {
    pub fn lcm(alpha: f64) -> Self {
        TargetStrategy::Lcm { alpha, stop_epoch: None, detach_target: false }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TargetStrategy::OneHot => Ok(()),
            TargetStrategy::LabelSmoothing { epsilon } => check_epsilon(epsilon),
            TargetStrategy::Lcm { alpha, stop_epoch, .. } => {
                check_alpha(alpha)?;
                if stop_epoch == Some(0) {
                    return Err(invalid("stop_epoch must be a positive integer"));
                }
                Ok(())
            }
        }
    }

    /// Whether SLD targets are in effect at `epoch`.
    pub fn lcm_active(&self, epoch: usize) -> bool {
        match self {
            TargetStrategy::Lcm { stop_epoch, .. } => stop_epoch.map_or(true, |e| epoch < e),
            _ => false,
        }
    }
}

impl fmt::Display for TargetStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetStrategy::OneHot => write!(f, "one-hot"),
            TargetStrategy::LabelSmoothing { epsilon } => write!(f, "ls({epsilon})"),
            TargetStrategy::Lcm { alpha, stop_epoch, detach_target } => {
                write!(f, "lcm({alpha}")?;
                if let Some(e) = stop_epoch {
                    write!(f, ",stop={e}")?;
                }
                if *detach_target {
                    write!(f, ",detach")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("smoothing epsilon {epsilon} must lie in (0, 1)")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= MIN_ALPHA {
        Ok(())
    } else {
        Err(invalid(format!("alpha {alpha} must be at least {MIN_ALPHA}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetSource {
    OneHot,
    LabelSmoothing,
    Simulated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution {
    pub values: Vec<f64>,
    pub source: TargetSource,
}

fn check_class(class_id: usize, num_classes: usize) -> Result<()> {
    if class_id < num_classes {
        Ok(())
    } else {
        Err(invalid(format!("class id {class_id} out of range for {num_classes} classes")))
    }
}

pub fn one_hot_target(class_id: usize, num_classes: usize) -> Result<TargetDistribution> {
    check_class(class_id, num_classes)?;
    let mut values = vec![0.0; num_classes];
    values[class_id] = 1.0;
    Ok(TargetDistribution { values, source: TargetSource::OneHot })
}

/// `(1 - epsilon) * one_hot + epsilon / C`.
pub fn label_smoothing_target(class_id: usize, num_classes: usize, epsilon: f64) -> Result<TargetDistribution> {
    check_epsilon(epsilon)?;
    let hot = one_hot_target(class_id, num_classes)?;
    let uniform = epsilon / num_classes as f64;
    let values = hot.values.iter().map(|&h| (1.0 - epsilon) * h + uniform).collect();
    Ok(TargetDistribution { values, source: TargetSource::LabelSmoothing })
}

/// LCD `y_c` for one representation.
pub fn label_confusion_distribution(v_i: &[f64], labels: &Tensor, head: &LcmHeadParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let nodes = head.bind(&mut tape, Bind::Frozen);
    let v = tape.constant(Tensor::matrix(1, v_i.len(), v_i.to_vec())?);
    let l = tape.constant(labels.clone());
    let y = head.record(&mut tape, nodes, v, l)?;
    Ok(tape.value(y).clone().into_data())
}

/// SLD `softmax(alpha * y_t + y_c)`.
pub fn simulated_label_distribution(y_t: &[f64], y_c: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if y_t.len() != y_c.len() {
        return Err(LcmError::Shape {
            primitive: "simulated_label_distribution",
            detail: format!("length {} vs {}", y_t.len(), y_c.len()),
        });
    }
    let ones = y_t.iter().filter(|&&v| v == 1.0).count();
    if ones != 1 || y_t.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid("y_t must be a one-hot vector"));
    }
    let mixed: Vec<f64> = y_t.iter().zip(y_c).map(|(t, c)| alpha * t + c).collect();
    softmax(&mixed)
}

/// `KL(y_s || y_p)`.
pub fn lcm_loss(y_s: &[f64], y_p: &[f64]) -> Result<f64> {
    kl_divergence(y_s, y_p)
}

/// Encoder outputs needed by the LCM strategy.
#[derive(Clone, Copy, Debug)]
pub struct LcmInputs<'a> {
    pub v_i: &'a [f64],
    pub labels: &'a Tensor,
    pub head: &'a LcmHeadParams,
}

/// Target for one example at `epoch`. One-hot and smoothing ignore the
/// LCM inputs; the LCM strategy returns the SLD until `stop_epoch`, then
/// the one-hot target.
pub fn make_target(
    strategy: &TargetStrategy,
    class_id: usize,
    num_classes: usize,
    lcm: Option<LcmInputs<'_>>,
    epoch: usize,
) -> Result<TargetDistribution> {
    strategy.validate()?;
    match *strategy {
        TargetStrategy::OneHot => one_hot_target(class_id, num_classes),
        TargetStrategy::LabelSmoothing { epsilon } => label_smoothing_target(class_id, num_classes, epsilon),
        TargetStrategy::Lcm { alpha, .. } => {
            if !strategy.lcm_active(epoch) {
                return one_hot_target(class_id, num_classes);
            }
            let inputs = lcm.ok_or_else(|| invalid("lcm strategy needs encoder outputs"))?;
            let y_t = one_hot_target(class_id, num_classes)?.values;
            let y_c = label_confusion_distribution(inputs.v_i, inputs.labels, inputs.head)?;
            if y_c.len() != num_classes {
                return Err(invalid(format!("LCD has {} entries, expected {num_classes}", y_c.len())));
            }
            let values = simulated_label_distribution(&y_t, &y_c, alpha)?;
            Ok(TargetDistribution { values, source: TargetSource::Simulated })
        }
    }
}

/// Records the SLD for a batch given constant one-hot rows and LCD rows.
pub fn record_sld(tape: &mut Tape, one_hot: NodeId, lcd: NodeId, alpha: f64) -> Result<NodeId> {
    let scaled = tape.scale(one_hot, alpha)?;
    let mixed = tape.add(scaled, lcd)?;
    tape.softmax(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot_target(0, 3).unwrap().values, vec![1.0, 0.0, 0.0]);
        assert_eq!(one_hot_target(2, 3).unwrap().values, vec![0.0, 0.0, 1.0]);
        assert!(one_hot_target(3, 3).is_err());
    }

    #[test]
    fn smoothing_examples() {
        let t = label_smoothing_target(0, 4, 0.1).unwrap();
        assert!(close(&t.values, &[0.925, 0.025, 0.025, 0.025], 1e-15));
        let tiny = label_smoothing_target(1, 3, 1e-12).unwrap();
        assert!(close(&tiny.values, &[0.0, 1.0, 0.0], 1e-11));
        let wide = label_smoothing_target(1, 2, 1.0 - 1e-9).unwrap();
        assert!(close(&wide.values, &[0.5, 0.5], 1e-8));
        assert!(label_smoothing_target(0, 4, 0.0).is_err());
        assert!(label_smoothing_target(0, 4, 1.0).is_err());
    }

    #[test]
    fn lcd_examples() {
        let c = 3;
        let labels = Tensor::identity(c);
        let head = LcmHeadParams { weight: Tensor::identity(c), bias: Tensor::zeros(&[c]) };
        let y = label_confusion_distribution(&[0.0, 50.0, 0.0], &labels, &head).unwrap();
        assert_eq!(crate::encoders::argmax(&y), 1);
        let u = label_confusion_distribution(&[0.0; 3], &labels, &head).unwrap();
        assert!(close(&u, &[1.0 / 3.0; 3], 1e-15));
        let biased = LcmHeadParams { weight: Tensor::identity(c), bias: Tensor::vector(vec![0.0, 0.0, 30.0]).unwrap() };
        let y = label_confusion_distribution(&[0.0; 3], &labels, &biased).unwrap();
        assert_eq!(crate::encoders::argmax(&y), 2);
        assert!(label_confusion_distribution(&[0.0; 2], &labels, &head).is_err());
    }

    #[test]
    fn sld_examples() {
        let s = simulated_label_distribution(&[1.0, 0.0], &[0.5, 0.5], 4.0).unwrap();
        assert!(close(&s, &[0.98201, 0.01799], 1e-5));
        let s = simulated_label_distribution(&[1.0, 0.0, 0.0], &[0.2, 0.5, 0.3], 1.0).unwrap();
        assert!(close(&s, &[0.52544, 0.26093, 0.21363], 1e-5));
        let c = 5.0;
        let s = simulated_label_distribution(&[0.0, 1.0, 0.0, 0.0, 0.0], &[0.2; 5], 2.0).unwrap();
        let expected = 2f64.exp() / (2f64.exp() + c - 1.0);
        assert!((s[1] - expected).abs() < 1e-12);
        assert!(simulated_label_distribution(&[0.5, 0.5], &[0.5, 0.5], 4.0).is_err());
        assert!(simulated_label_distribution(&[1.0, 0.0], &[0.5, 0.5], 0.4).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(lcm_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let l = lcm_loss(&[0.98201, 0.01799], &[0.5, 0.5]).unwrap();
        let expected = 0.98201 * (0.98201f64 / 0.5).ln() + 0.01799 * (0.01799f64 / 0.5).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.6031).abs() < 1e-3);
    }

    #[test]
    fn make_target_dispatch_and_schedule() {
        let c = 3;
        let labels = Tensor::matrix(3, 2, vec![0.3, -0.1, 0.5, 0.2, -0.4, 0.6]).unwrap();
        let head = LcmHeadParams::init(c, 4);
        let inputs = LcmInputs { v_i: &[0.2, -0.7], labels: &labels, head: &head };
        let hot = make_target(&TargetStrategy::OneHot, 1, c, None, 0).unwrap();
        assert_eq!(hot, one_hot_target(1, c).unwrap());

        let lcm = TargetStrategy::Lcm { alpha: 4.0, stop_epoch: Some(10), detach_target: false };
        let after = make_target(&lcm, 1, c, Some(inputs), 10).unwrap();
        assert_eq!(after, one_hot_target(1, c).unwrap());
        let before = make_target(&lcm, 1, c, Some(inputs), 9).unwrap();
        assert_eq!(before.source, TargetSource::Simulated);
        assert!(before.values.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(make_target(&lcm, 1, c, None, 9).is_err());
    }

    #[test]
    fn strategy_validation_and_names() {
        assert!(TargetStrategy::lcm(0.49).validate().is_err());
        assert!(TargetStrategy::LabelSmoothing { epsilon: 1.2 }.validate().is_err());
        assert!(TargetStrategy::Lcm { alpha: 4.0, stop_epoch: Some(0), detach_target: false }.validate().is_err());
        assert_eq!(TargetStrategy::lcm(4.0).to_string(), "lcm(4)");
        assert_eq!(TargetStrategy::LabelSmoothing { epsilon: 0.1 }.to_string(), "ls(0.1)");
        let parsed: TargetStrategy = serde_json::from_str(r#"{"kind":"lcm","alpha":2,"stop_epoch":5}"#).unwrap();
        assert_eq!(parsed, TargetStrategy::Lcm { alpha: 2.0, stop_epoch: Some(5), detach_target: false });
        assert!(serde_json::from_str::<TargetStrategy>(r#"{"kind":"lcm","alpha":4,"x":1}"#).is_err());
    }
}
