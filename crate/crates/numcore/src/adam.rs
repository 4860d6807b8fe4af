//! Bias-corrected Adam.

use crate::tensor::Tensor;
use crate::{NumError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment buffers plus the step counter.
///
/// Buffers are index-aligned with the parameter list handed to
/// [`AdamState::step`]; the caller owns the ordering.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&Tensor]) -> Self {
        let lens: Vec<usize> = params.iter().map(|p| p.numel()).collect();
        Self::new(config, &lens)
    }

    /// One Adam update over index-aligned parameters and gradients.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NumError::InvalidArgument {
                op: "adam_step",
                detail: format!(
                    "state holds {} buffers, got {} params / {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for ((p, g), i) in params.iter().zip(grads).zip(0..) {
            if p.numel() != g.len() || p.numel() != self.m[i].len() {
                return Err(NumError::DimensionMismatch {
                    op: "adam_step",
                    detail: format!(
                        "param {} has {} elements, grad {}, buffer {}",
                        i,
                        p.numel(),
                        g.len(),
                        self.m[i].len()
                    ),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = p.data_mut();
            for k in 0..data.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                data[k] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
            if !data.iter().all(|x| x.is_finite()) {
                return Err(NumError::NonFinite { op: "adam_step" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_learning_rate() {
        let lr = 0.05;
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = vec![0.3, -0.7, 1.9];
        let before = p.data().to_vec();
        let mut state = AdamState::new(AdamConfig::with_learning_rate(lr), &[3]);
        state.step(&mut [&mut p], &[&g]).unwrap();
        for k in 0..3 {
            let update = p.data()[k] - before[k];
            let expected = -lr * g[k].signum();
            assert!((update - expected).abs() < lr * 1e-6, "k={k}: {update} vs {expected}");
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut p = Tensor::new(vec![2], vec![3.0, -4.0]).unwrap();
        let g = vec![0.0, 0.0];
        let before = p.data().to_vec();
        let mut state = AdamState::new(AdamConfig::default(), &[2]);
        state.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p.data(), before.as_slice());
    }

    #[test]
    fn quadratic_descent_shrinks_x_each_step() {
        // f(x) = x², so grad = 2x; ten steps from x = 1 at lr = 0.1.
        let mut x = Tensor::scalar(1.0).unwrap();
        let mut state = AdamState::new(AdamConfig::with_learning_rate(0.1), &[1]);
        let mut prev = 1.0_f64;
        for _ in 0..10 {
            let g = vec![2.0 * x.data()[0]];
            state.step(&mut [&mut x], &[&g]).unwrap();
            let cur = x.data()[0].abs();
            assert!(cur < prev, "|x| must strictly decrease: {cur} !< {prev}");
            prev = cur;
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let g = vec![1.0];
        let mut state = AdamState::new(AdamConfig::default(), &[2]);
        assert!(state.step(&mut [&mut p], &[&g]).is_err());
    }
}
