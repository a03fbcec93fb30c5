//! Reproducible experiment drivers over `sigma-core`: JSON configuration in,
//! CSV tables out.

pub mod config;
pub mod experiments;
pub mod table;

pub use config::{ExperimentConfig, Method, Model, ModelSpec};
pub use experiments::{Estimate, Estimator, Outputs};
pub use table::{num, Table};
