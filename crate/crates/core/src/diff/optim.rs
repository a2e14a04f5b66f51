use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimMode {
    /// First/second-moment adaptive update with bias correction.
    Adam,
    /// `θ ← θ - lr·g`
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub mode: OptimMode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mode: OptimMode::Adam,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamVector, grads: &ParamVector, cfg: &OptimizerConfig) -> Result<()> {
        if !params.same_layout(grads) {
            return Err(contract!("optimizer: parameter and gradient layouts differ"));
        }
        let n = params.len();
        if self.m.is_empty() && self.step == 0 {
            *self = Self::new(n);
        }
        if self.m.len() != n || self.v.len() != n {
            return Err(contract!("optimizer state has {} slots, parameters have {}", self.m.len(), n));
        }
        let mut theta = params.flatten();
        let g = grads.flatten();
        self.step += 1;
        match cfg.mode {
            OptimMode::Plain => {
                for (t, gi) in theta.iter_mut().zip(&g) {
                    *t -= cfg.lr * gi;
                }
            }
            OptimMode::Adam => {
                let bc1 = 1.0 - libm::pow(cfg.beta1, self.step as f64);
                let bc2 = 1.0 - libm::pow(cfg.beta2, self.step as f64);
                for i in 0..n {
                    self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
                    self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    let mh = self.m[i] / bc1;
                    let vh = self.v[i] / bc2;
                    theta[i] -= cfg.lr * mh / (libm::sqrt(vh) + cfg.eps);
                }
            }
        }
        *params = params.unflatten(&theta)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_flat_single("theta", v.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = pv(&[1.0, -2.0, 3.5]);
        let before = p.clone();
        let mut s = AdamState::default();
        s.step(&mut p, &pv(&[0.0; 3]), &OptimizerConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn plain_step_on_half_square() {
        // f = θ²/2 → g = θ
        let mut p = pv(&[1.0]);
        let cfg = OptimizerConfig {
            mode: OptimMode::Plain,
            lr: 0.1,
            ..Default::default()
        };
        let g = p.clone();
        AdamState::default().step(&mut p, &g, &cfg).unwrap();
        assert!((p.flatten()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_layout_checked() {
        let cfg = OptimizerConfig::default();
        let run = || {
            let mut p = pv(&[0.3, 0.7]);
            let mut s = AdamState::default();
            for _ in 0..5 {
                let g = p.clone();
                s.step(&mut p, &g, &cfg).unwrap();
            }
            (p, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   b.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(sa, sb);
        let mut p = pv(&[1.0]);
        assert!(AdamState::default().step(&mut p, &pv(&[1.0, 2.0]), &cfg).is_err());
    }
}
