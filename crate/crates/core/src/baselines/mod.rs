//! Comparison models: persistence, the datasheet-parameterised physical model and regressors.

pub mod datasheet;
pub mod grid;
pub mod persistence;
pub mod regression;
