use log::warn;
use serde::{Deserialize, Serialize};

use super::config::OptimizerConfig;
use crate::error::{check_len, Result};

/// Optimizer state over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    /// Adam steps taken so far.
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Updates skipped because the gradient was not finite.
    pub skipped: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        let moments = match config {
            OptimizerConfig::Sgd => 0,
            OptimizerConfig::Adam { .. } => n_params,
        };
        Self {
            config,
            step: 0,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            skipped: 0,
        }
    }

    /// One descent step on `params`. Entries with `mask[i] == false` are left
    /// alone. Returns `false` (and changes nothing) if `grads` is not finite.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], mask: &[bool], lr: f64) -> Result<bool> {
        check_len("gradient length", params.len(), grads.len())?;
        check_len("mask length", params.len(), mask.len())?;
        if !grads.iter().all(|g| g.is_finite()) {
            self.skipped += 1;
            warn!("non-finite gradient, update skipped ({} so far)", self.skipped);
            return Ok(false);
        }
        match self.config {
            OptimizerConfig::Sgd => {
                for ((p, g), &on) in params.iter_mut().zip(grads).zip(mask) {
                    if on {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                check_len("Adam moments", params.len(), self.first_moment.len())?;
                self.step += 1;
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for i in 0..params.len() {
                    if !mask[i] {
                        continue;
                    }
                    let g = grads[i];
                    let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
                    let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
                    self.first_moment[i] = m;
                    self.second_moment[i] = v;
                    params[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                }
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerConfig::Sgd, 1);
        let mut p = [1.0];
        assert!(opt.update(&mut p, &[2.0], &[true], 0.1).unwrap());
        assert!((p[0] - 0.8).abs() < 1e-15);
        opt.update(&mut p, &[0.0], &[true], 0.1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut opt = Optimizer::new(OptimizerConfig::default(), 2);
        let mut p = [1.0, -1.0];
        opt.update(&mut p, &[0.5, -3.0], &[true, true], 0.01).unwrap();
        // m = 0.1 g, v = 0.001 g^2, bias corrected to g and g^2.
        let step = |g: f64| {
            let m_hat = (0.1 * g) / 0.1;
            let v_hat = (0.001 * g * g) / (1.0 - 0.999);
            0.01 * m_hat / (v_hat.sqrt() + 1e-8)
        };
        assert!((p[0] - (1.0 - step(0.5))).abs() < 1e-15);
        assert!((p[1] - (-1.0 - step(-3.0))).abs() < 1e-15);
        assert!((p[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn masked_and_non_finite() {
        let mut opt = Optimizer::new(OptimizerConfig::default(), 2);
        let mut p = [1.0, 1.0];
        opt.update(&mut p, &[1.0, 1.0], &[true, false], 0.1).unwrap();
        assert_eq!(p[1], 1.0);
        let before = (p, opt.clone());
        assert!(!opt.update(&mut p, &[f64::NAN, 0.0], &[true, true], 0.1).unwrap());
        assert_eq!(p, before.0);
        assert_eq!(opt.step, before.1.step);
        assert_eq!(opt.skipped, 1);
    }
}
