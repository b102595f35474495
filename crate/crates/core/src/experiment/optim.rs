use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..Self::sgd(lr)
        }
    }

    /// A zero learning rate is accepted and leaves parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::domain(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if self.kind == OptimizerKind::Adam {
            let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
            if !ok {
                return Err(Error::domain("adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// Moment estimates and step count. SGD keeps the vectors empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, dim: usize) -> Self {
        let n = if kind == OptimizerKind::Adam { dim } else { 0 };
        OptimizerState {
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// Descend along `grad`.
pub fn optimizer_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    params: &mut [T],
    grad: &[T],
    hyper: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::domain(format!(
            "gradient length {} does not match parameter length {}",
            grad.len(),
            params.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!("non-finite gradient at coordinate {i}")));
    }
    let lr = T::of(hyper.lr);
    state.step += 1;
    match hyper.kind {
        OptimizerKind::Sgd => {
            for (p, &g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => {
            if state.m.len() != params.len() {
                return Err(Error::domain("adam state has the wrong dimension"));
            }
            let (b1, b2, eps) = (T::of(hyper.beta1), T::of(hyper.beta2), T::of(hyper.eps));
            let t = state.step as i32;
            let c1 = T::one() - b1.powi(t);
            let c2 = T::one() - b2.powi(t);
            for i in 0..params.len() {
                let g = grad[i];
                state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
                state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
                let mhat = state.m[i] / c1;
                let vhat = state.v[i] / c2;
                params[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_onehot() {
        let mut p = vec![1.0, 2.0, 3.0];
        let mut s = OptimizerState::new(OptimizerKind::Sgd, 3);
        optimizer_step(&mut s, &mut p, &[0.0, 1.0, 0.0], &OptimizerConfig::sgd(0.1)).unwrap();
        assert_eq!(p, vec![1.0, 2.0 - 0.1, 3.0]);
        optimizer_step(&mut s, &mut p, &[0.0; 3], &OptimizerConfig::sgd(0.1)).unwrap();
        assert_eq!(p, vec![1.0, 2.0 - 0.1, 3.0]);
    }

    #[test]
    fn adam_matches_scalar_recurrence() {
        let cfg = OptimizerConfig::adam(0.01);
        let grads = [0.5, -0.2, 0.0, 1e-3, 3.0];
        let mut p = vec![0.3];
        let mut s = OptimizerState::new(OptimizerKind::Adam, 1);
        let (mut x, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        for (k, g) in grads.iter().enumerate() {
            optimizer_step(&mut s, &mut p, &[*g], &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (k + 1) as i32;
            x -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((p[0] - x).abs() <= 1e-15, "step {k}");
        }
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut p = vec![0.0f64, 0.0];
        let mut s = OptimizerState::new(OptimizerKind::Adam, 2);
        optimizer_step(&mut s, &mut p, &[2.0, -0.5], &OptimizerConfig::adam(0.1)).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8 && (p[1] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_zero_gradient_decays_moments() {
        let cfg = OptimizerConfig::adam(0.1);
        let mut p = vec![0.0];
        let mut s = OptimizerState::new(OptimizerKind::Adam, 1);
        optimizer_step(&mut s, &mut p, &[1.0], &cfg).unwrap();
        let (m, v) = (s.m[0], s.v[0]);
        optimizer_step(&mut s, &mut p, &[0.0], &cfg).unwrap();
        assert_eq!(s.m[0], 0.9 * m);
        assert_eq!(s.v[0], 0.999 * v);
    }

    #[test]
    fn rejects_bad_input() {
        let mut p = vec![0.0];
        let mut s = OptimizerState::new(OptimizerKind::Sgd, 1);
        let cfg = OptimizerConfig::sgd(0.1);
        assert!(matches!(optimizer_step(&mut s, &mut p, &[f64::NAN], &cfg), Err(Error::Numeric(_))));
        assert!(optimizer_step(&mut s, &mut p, &[1.0, 2.0], &cfg).is_err());
        assert!(OptimizerConfig::sgd(-1.0).validate().is_err());
    }
}
