use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientMap, Tensor};
use crate::error::{LcmError, Result};

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One bias-corrected Adam update. A parameter without a gradient entry
    /// is treated as having a zero gradient. Any non-finite gradient aborts
    /// before anything is modified.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Tensor)>,
        grads: &GradientMap,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(LcmError::NonFiniteGradient(name.clone()));
        }
        let params: Vec<(&str, &mut Tensor)> = params.into_iter().collect();
        for (name, p) in &params {
            if let Some(g) = grads.get(*name) {
                if g.shape() != p.shape() {
                    return Err(LcmError::Shape {
                        primitive: "adam_step",
                        detail: format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
                    });
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, p) in params {
            let m = self.first.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.second.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            let g = grads.get(name);
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, theta) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(grad: f64) -> f64 {
        let mut w = Tensor::scalar(0.0);
        let mut grads = GradientMap::new();
        grads.insert("w".into(), Tensor::scalar(grad));
        AdamState::new().update([("w", &mut w)], &grads, &AdamConfig::default()).unwrap();
        w.data()[0]
    }

    #[test]
    fn first_step_is_learning_rate() {
        // m_hat = g, v_hat = g^2 => step = lr * g / (|g| + eps)
        assert!((step_once(1.0) + 1e-3).abs() < 1e-6);
        assert!((step_once(100.0) + 1e-3).abs() < 1e-6);
        assert!((step_once(-0.01) - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_moves_less_than_lr() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new();
        let mut w = Tensor::scalar(1.0);
        let mut grads = GradientMap::new();
        grads.insert("w".into(), Tensor::scalar(0.5));
        state.update([("w", &mut w)], &grads, &cfg).unwrap();
        grads.insert("w".into(), Tensor::scalar(0.0));
        for _ in 0..50 {
            let before = w.data()[0];
            state.update([("w", &mut w)], &grads, &cfg).unwrap();
            assert!((w.data()[0] - before).abs() < cfg.learning_rate);
        }
        let mut fresh = Tensor::scalar(2.0);
        let mut s2 = AdamState::new();
        s2.update([("w", &mut fresh)], &grads, &cfg).unwrap();
        assert_eq!(fresh.data()[0], 2.0);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut w = Tensor::scalar(0.0);
        let mut grads = GradientMap::new();
        grads.insert("layer.w".into(), Tensor::scalar(f64::NAN));
        let err = AdamState::new().update([("layer.w", &mut w)], &grads, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("layer.w"));
        assert_eq!(w.data()[0], 0.0);
    }
}
