//! Learned surrogate simulators for phosphorus-removal dosing control.
//!
//! The crate turns process logs of (value, quality) pairs into one-step
//! forecasters, wraps a trained forecaster as a step/reset environment, and
//! measures how rollout error compounds over long episodes. A synthetic
//! closed-loop plant supplies ground truth for every stage.

pub mod data;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod models;
pub mod nn;
pub mod plant;
pub mod training;

pub use error::{Error, Result};
