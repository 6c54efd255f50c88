//! Censored least-absolute-deviation regression with an l1 penalty.
//!
//! The crate provides the penalised censored estimator and its baselines,
//! synthetic data generation with exact signal-to-noise control, computable
//! theoretical constants, and a deterministic simulation harness with CSV
//! and markdown reports.

pub mod datagen;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod model;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
