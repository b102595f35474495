use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Fixed,
    LinearIncrease,
    LinearDecrease,
}

/// Schedule settings as they appear in a run config. The horizon is filled in
/// from the number of optimizer steps once the run length is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub strategy: Strategy,
    pub lambda_min: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
}

fn default_lambda_max() -> f64 {
    1.0
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::fixed(1.0)
    }
}

impl ScheduleConfig {
    pub fn fixed(f: f64) -> Self {
        ScheduleConfig {
            strategy: Strategy::Fixed,
            lambda_min: f,
            lambda_max: default_lambda_max(),
        }
    }

    pub fn with_horizon(self, horizon: usize) -> Result<ScheduleSpec> {
        ScheduleSpec::new(self.strategy, self.lambda_min, self.lambda_max, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        self.with_horizon(1).map(|_| ())
    }
}

/// The shift coefficient `f` as a function of the optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub strategy: Strategy,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub horizon: usize,
}

impl ScheduleSpec {
    /// `lambda_min` must be positive and finite. The linear strategies also
    /// need `lambda_min <= lambda_max`; the fixed strategy ignores
    /// `lambda_max`, so a fixed value above 1 is representable.
    pub fn new(strategy: Strategy, lambda_min: f64, lambda_max: f64, horizon: usize) -> Result<Self> {
        if !(lambda_min.is_finite() && lambda_min > 0.0) {
            return Err(Error::domain(format!("lambda_min must be > 0, got {lambda_min}")));
        }
        if strategy != Strategy::Fixed && !(lambda_max.is_finite() && lambda_min <= lambda_max) {
            return Err(Error::domain(format!(
                "need lambda_min <= lambda_max, got {lambda_min} > {lambda_max}"
            )));
        }
        if horizon == 0 {
            return Err(Error::domain("schedule horizon must be positive"));
        }
        Ok(ScheduleSpec {
            strategy,
            lambda_min,
            lambda_max,
            horizon,
        })
    }

    pub fn fixed(f: f64, horizon: usize) -> Result<Self> {
        Self::new(Strategy::Fixed, f, default_lambda_max(), horizon)
    }
}

/// Value of `f` at step `t`, `0 <= t <= T`.
pub fn f_value(spec: &ScheduleSpec, t: usize) -> Result<f64> {
    let horizon = spec.horizon;
    if t > horizon {
        return Err(Error::domain(format!("step {t} outside [0, {horizon}]")));
    }
    let frac = t as f64 / horizon as f64;
    let (lo, hi) = (spec.lambda_min, spec.lambda_max);
    Ok(match spec.strategy {
        Strategy::Fixed => lo,
        Strategy::LinearIncrease => frac * (hi - lo) + lo,
        Strategy::LinearDecrease => frac * (lo - hi) + hi,
    })
}
