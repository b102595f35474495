//! Shifted DPO on toy policies with exact gradients.
//!
//! Everything numeric is generic over [`scalar::Scalar`]; the aliases below
//! fix it to `f64`, which is what the run artifacts and the CLI use.

pub mod cli;
pub mod config;
pub mod data;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod math;
pub mod objectives;
pub mod policy;
pub mod scalar;

pub use error::{Error, Result};

pub type LogLinearPolicy = policy::LogLinearPolicy<f64>;
pub type TabularPolicy = policy::TabularPolicy<f64>;
pub type AnyPolicy = policy::AnyPolicy<f64>;
pub type PolicyParams = policy::PolicyParams<f64>;
pub type SparseGrad = policy::SparseGrad<f64>;
pub type LossBreakdown = objectives::LossBreakdown<f64>;
pub type DiagnosticsRecord = diagnostics::DiagnosticsRecord<f64>;
pub type SignStatistics = diagnostics::SignStatistics<f64>;
pub type GapReport = diagnostics::GapReport<f64>;
