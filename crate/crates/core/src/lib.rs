//! Simulation and MAC accounting for neural group testing.
//!
//! Populations of labelled samples are screened by group testing schedules
//! (two-round, multi-round, one-round double pool). Each test's outcome comes
//! from a calibrated error model and each forward pass is priced under one of
//! three group network designs (pixel, feature, or tree merge).

pub mod bundled;
pub mod calibration;
pub mod cost_model;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod population;
pub mod reference;
pub mod report;
pub mod rng;
pub mod strategies;
pub mod validate;

pub use error::{Error, Result};
