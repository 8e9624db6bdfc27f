use std::collections::BTreeMap;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{invalid, LcmError, Result};

/// Named parameter handles passed to a loss builder.
pub type ParamHandles = BTreeMap<String, NodeId>;

fn evaluate<F>(build: &F, params: &BTreeMap<String, Tensor>) -> Result<(Tape, NodeId)>
where
    F: Fn(&mut Tape, &ParamHandles) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let handles = params
        .iter()
        .map(|(name, t)| (name.clone(), tape.param(name.clone(), t.clone())))
        .collect();
    let loss = build(&mut tape, &handles)?;
    Ok((tape, loss))
}

fn scalar_loss<F>(build: &F, params: &BTreeMap<String, Tensor>) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamHandles) -> Result<NodeId>,
{
    let (tape, loss) = evaluate(build, params)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(LcmError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares backprop gradients with central differences at every parameter
/// coordinate and returns the largest relative error (absolute error when
/// both values are below `1e-8` in magnitude).
pub fn grad_check<F>(build: F, params: &BTreeMap<String, Tensor>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamHandles) -> Result<NodeId>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(invalid(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let (tape, loss) = evaluate(&build, params)?;
    let grads = tape.backprop(loss)?;
    let first = tape.value(loss).data()[0];
    let second = scalar_loss(&build, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(LcmError::NonDeterministic { first, second });
    }

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (name, value) in params {
        let analytic = &grads[name];
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = scalar_loss(&build, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = scalar_loss(&build, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / a.abs().max(numeric.abs())
            };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
