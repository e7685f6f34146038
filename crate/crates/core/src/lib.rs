//! Causality-aware, dual-granularity medication recommendation.
//!
//! The pipeline mines causal structure between clinical entities, learns
//! patient representations over medication- and molecule-level graphs, and
//! post-corrects recommendation probabilities with the mined effects.

pub mod config;
pub mod correction;
pub mod ehr;
pub mod error;
pub mod mining;
pub mod model;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
