//! AdamW with decoupled weight decay.
//!
//! Per parameter, with gradient `g` at step `t`:
//!
//! ```text
//! m = b1 * m + (1 - b1) * g
//! v = b2 * v + (1 - b2) * g^2
//! theta *= 1 - lr * wd
//! theta -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use serde::{Deserialize, Serialize};

use super::array::DenseArray;
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub first_moment: Vec<DenseArray>,
    pub second_moment: Vec<DenseArray>,
    pub step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|p| DenseArray::zeros(p.value.shape())).collect();
        AdamW {
            config,
            first_moment: zeros(),
            second_moment: zeros(),
            step: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update from the accumulated gradients. Gradients are left in place;
    /// call [`ParamStore::zero_grad`] before accumulating the next batch.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.first_moment.len() != params.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        if let Some(bad) = params.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient in {}", bad.name)));
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let g = p.grad.data();
            let theta = p.value.data_mut();
            for i in 0..theta.len() {
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * g[i];
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * g[i] * g[i];
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                theta[i] = theta[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", DenseArray::vector(vec![x])).unwrap();
        p
    }

    #[test]
    fn zero_gradient_without_decay_leaves_parameters() {
        let mut p = scalar_store(1.5);
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.0), &p);
        for _ in 0..5 {
            opt.step(&mut p).unwrap();
        }
        assert_eq!(p.iter().next().unwrap().value.data(), &[1.5]);
        assert_eq!(opt.step, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Hand-stepped recurrence: m = 0.1, v = 0.001, m_hat = 1, v_hat = 1,
        // so the update is -lr * 1 / (1 + eps).
        let mut p = scalar_store(2.0);
        p.iter_mut().next().unwrap().grad.data_mut()[0] = 1.0;
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.0), &p);
        opt.step(&mut p).unwrap();
        let x = p.iter().next().unwrap().value.data()[0];
        assert!((x - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_is_decoupled_from_the_gradient() {
        let mut p = scalar_store(2.0);
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.5), &p);
        opt.step(&mut p).unwrap();
        let x = p.iter().next().unwrap().value.data()[0];
        assert!((x - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_fails_fast() {
        let mut p = scalar_store(1.0);
        p.iter_mut().next().unwrap().grad.data_mut()[0] = f64::NAN;
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.0), &p);
        assert!(matches!(opt.step(&mut p), Err(Error::Divergence(_))));
        assert_eq!(opt.step, 0);
        assert_eq!(p.iter().next().unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p = scalar_store(0.3);
            let mut opt = AdamW::new(AdamWConfig::new(0.01, 0.01), &p);
            for k in 0..50 {
                p.zero_grad();
                let x = p.iter().next().unwrap().value.data()[0];
                p.iter_mut().next().unwrap().grad.data_mut()[0] = 2.0 * x + (k as f64).sin();
                opt.step(&mut p).unwrap();
            }
            let bits = p.iter().next().unwrap().value.data()[0].to_bits();
            bits
        };
        assert_eq!(run(), run());
    }
}
