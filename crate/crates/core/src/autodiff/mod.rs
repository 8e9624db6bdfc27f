//! Dense `f64` tensors with a recording tape for reverse-mode gradients.
//!
//! The primitive set is deliberately closed: matrix multiply, elementwise
//! arithmetic, bias add, tanh/relu, clamped log, row softmax, row gather,
//! segment/axis means, reductions and a fused KL divergence. There is no
//! general broadcasting.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, ParamHandles};
pub use ops::{Primitive, PROB_FLOOR};
pub use tape::{GradientMap, NodeId, Tape};
pub use tensor::Tensor;

use crate::error::{invalid, LcmError, Result};


/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(LcmError::EmptyInput("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(invalid("softmax logits must be finite"));
    }
    Ok(ops::softmax_row(logits).collect())
}

/// `KL(target || predicted)` in nats, with `0 log 0 = 0` and predicted
/// entries clamped below at [`PROB_FLOOR`].
pub fn kl_divergence(target: &[f64], predicted: &[f64]) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(LcmError::Shape {
            primitive: "kl_divergence",
            detail: format!("length {} vs {}", target.len(), predicted.len()),
        });
    }
    Ok(ops::kl_row(target, predicted))
}

/// Applies one primitive outside any tape.
pub fn apply_primitive(prim: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    prim.forward(inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::matrix(3, 2, vec![1.0, -2.0, 3.5, 0.25, 9.0, 4.0]).unwrap();
        let out = apply_primitive(&Primitive::MatMul, &[&Tensor::identity(3), &a]).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn row_means() {
        let a = Tensor::matrix(2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let out = apply_primitive(&Primitive::MeanAxis(1), &[&a]).unwrap();
        assert_eq!(out.data(), &[2.0, 6.0]);
        let cols = apply_primitive(&Primitive::MeanAxis(0), &[&a]).unwrap();
        assert_eq!(cols.data(), &[3.0, 5.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_primitive() {
        let a = Tensor::zeros(&[2, 3]);
        let err = apply_primitive(&Primitive::MatMul, &[&a, &a]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        assert!(close(&p, &[0.09003, 0.24473, 0.66524], 1e-5));
        let big = softmax(&[1000.0, 0.0]).unwrap();
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big[0] - 1.0).abs() < 1e-12 && big[1] < 1e-300);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        let clamped = kl_divergence(&[0.5, 0.5], &[0.0, 1.0]).unwrap();
        assert!(clamped.is_finite() && clamped > 10.0);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let w = tape.param("w", Tensor::scalar(3.0));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backprop(loss).unwrap();
        assert_eq!(grads["w"].data(), &[6.0]);
    }

    #[test]
    fn softmax_kl_gradient_is_p_minus_target() {
        let z = vec![0.3, -1.2, 2.0, 0.7];
        let target = vec![0.1, 0.2, 0.6, 0.1];
        let mut tape = Tape::new();
        let zn = tape.param("z", Tensor::vector(z.clone()).unwrap());
        let t = tape.constant(Tensor::vector(target.clone()).unwrap());
        let p = tape.softmax(zn).unwrap();
        let loss = tape.kl_divergence(t, p).unwrap();
        let g = tape.backprop(loss).unwrap();
        let expected: Vec<f64> = softmax(&z).unwrap().iter().zip(&target).map(|(p, t)| p - t).collect();
        assert!(close(g["z"].data(), &expected, 1e-12));
    }

    #[test]
    fn unreachable_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param("w", Tensor::scalar(2.0));
        let _u = tape.param("unused", Tensor::zeros(&[2, 3]));
        let loss = tape.mul(w, w).unwrap();
        let g = tape.backprop(loss).unwrap();
        assert_eq!(g["unused"], Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.param("w", Tensor::zeros(&[2]));
        assert!(matches!(tape.backprop(w), Err(LcmError::NonScalarLoss(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let a = tape.param("a", Tensor::matrix(2, 3, vec![0.1, -0.4, 0.9, 1.3, 0.2, -0.7]).unwrap());
        let b = tape.param("b", Tensor::matrix(3, 2, vec![0.5, 0.1, -0.3, 0.8, 0.6, -0.2]).unwrap());
        let m = tape.matmul(a, b).unwrap();
        let h = tape.tanh(m).unwrap();
        let s = tape.softmax(h).unwrap();
        let l = tape.log(s).unwrap();
        let out = tape.mean(l).unwrap();
        let replayed = tape.replay(out).unwrap();
        assert_eq!(replayed.data()[0].to_bits(), tape.value(out).data()[0].to_bits());
    }

    #[test]
    fn quadratic_grad_check() {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::vector(vec![0.5, -1.5, 2.0]).unwrap());
        let err = grad_check(
            |tape, h| {
                let sq = tape.mul(h["w"], h["w"])?;
                tape.sum(sq)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::scalar(1.0));
        let r = grad_check(|tape, h| tape.sum(h["w"]), &params, 1.0);
        assert!(matches!(r, Err(LcmError::InvalidArgument(_))));
    }

    #[test]
    fn grad_check_rejects_nondeterminism() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::scalar(1.0));
        let r = grad_check(
            |tape, h| {
                calls.set(calls.get() + 1.0);
                let c = tape.constant(Tensor::scalar(calls.get()));
                let s = tape.add(h["w"], c)?;
                tape.sum(s)
            },
            &params,
            1e-5,
        );
        assert!(matches!(r, Err(LcmError::NonDeterministic { .. })));
    }

    #[test]
    fn every_primitive_passes_grad_check() {
        let mut params = BTreeMap::new();
        params.insert("a".into(), Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        params.insert("b".into(), Tensor::matrix(4, 2, (0..8).map(|i| (i as f64 * 0.91).cos()).collect()).unwrap());
        params.insert("bias".into(), Tensor::vector(vec![0.1, -0.2]).unwrap());
        params.insert("t".into(), Tensor::matrix(3, 2, vec![0.3, 0.2, -0.5, 0.9, 0.4, 0.1]).unwrap());
        let err = grad_check(
            |tape, h| {
                let g = tape.gather(h["a"], vec![2, 0, 1, 1, 2])?;
                let pooled = tape.segment_mean(g, vec![2, 3])?;
                let x = tape.apply(Primitive::Relu, &[pooled])?;
                let x = tape.add(x, pooled)?;
                let m = tape.matmul(x, h["b"])?;
                let m = tape.add_bias(m, h["bias"])?;
                let m = tape.tanh(m)?;
                let tt = tape.transpose(h["t"])?;
                let tt = tape.transpose(tt)?;
                let tt = tape.apply(Primitive::Gather(vec![0, 2]), &[tt])?;
                let d = tape.sub(m, tt)?;
                let d = tape.scale(d, 1.7)?;
                let sm = tape.softmax(d)?;
                let lg = tape.log(sm)?;
                let col = tape.apply(Primitive::MeanAxis(0), &[lg])?;
                let row = tape.apply(Primitive::MeanAxis(1), &[lg])?;
                let target = tape.softmax(tt)?;
                let kl = tape.kl_divergence(target, sm)?;
                let s1 = tape.sum(col)?;
                let s2 = tape.mean(row)?;
                let s = tape.add(s1, s2)?;
                tape.add(s, kl)
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
