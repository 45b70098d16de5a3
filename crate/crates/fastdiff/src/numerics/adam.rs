use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Adam hyperparameters. Defaults: lr 2e-4, β₁ 0.9, β₂ 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam_step: {} params, {} grads, state holds {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        let lr = self.config.lr;
        let eps = self.config.eps;

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            p.check_same_shape(g)?;
            if !g.all_finite() {
                return Err(Error::NonFinite("adam_step: gradient".to_string()));
            }
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i].as_f64();
                let mi = b1 * md[i].as_f64() + (1.0 - b1) * gi;
                let vi = b2 * vd[i].as_f64() + (1.0 - b2) * gi * gi;
                md[i] = T::of_f64(mi);
                vd[i] = T::of_f64(vi);
                let m_hat = mi / bias1;
                let v_hat = vi / bias2;
                let upd = lr * m_hat / (v_hat.sqrt() + eps);
                pd[i] = T::of_f64(pd[i].as_f64() - upd);
            }
        }
        Ok(())
    }
}
