//! Objective and diagnostics settings shared across modules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::ScheduleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Dpo,
    DpoShift,
    AlphaDpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub objective_kind: ObjectiveKind,
    /// Reward temperature.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Weight of the length-normalised SFT term in alpha-DPO; 0 disables it.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

fn default_beta() -> f64 {
    0.1
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            objective_kind: ObjectiveKind::DpoShift,
            beta: default_beta(),
            alpha: 0.0,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::domain(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::domain(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Smoothing factor of the soft margin indicator.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Step size used when measuring one-step gaps.
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_eta() -> f64 {
    1e-3
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            gamma: default_gamma(),
            eta: default_eta(),
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::domain(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::domain(format!("eta must be > 0, got {}", self.eta)));
        }
        Ok(())
    }
}
