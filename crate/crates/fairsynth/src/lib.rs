//! Fairness-aware synthetic EHR generation and downstream evaluation.
//!
//! The crate trains an autoregressive transformer over patient visit
//! sequences whose loss couples code-level cross-entropy with a
//! differentiable group-fairness penalty, samples synthetic cohorts from
//! it, and measures on a mortality predictor whether augmenting real data
//! with those cohorts narrows group gaps. See the `examples/` directory
//! for one runnable program per capability.

pub mod augment;
pub mod config;
pub mod data;
pub mod downstream;
pub mod error;
pub mod fairness;
pub mod generator;
pub mod harness;
pub mod nn;
pub mod preprocess;

pub use error::{Error, Result};
