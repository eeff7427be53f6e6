//! Dynamic single-diode performance models for PV arrays, with baselines,
//! metrics and a day-ahead benchmark harness.

pub mod analysis;
pub mod baselines;
pub mod benchmark;
pub mod config;
pub mod error;
pub mod fit;
pub mod forecast;
pub mod io;
pub mod models;
pub mod optim;
pub mod preprocess;
pub mod sdm;
pub mod synth;

pub use error::{Error, Result};
