//! Comparison baselines: the extended Kalman filter/smoother and a particle filter.

mod ekf;
mod pf;

pub use ekf::{ekf_filter_pass, ekf_log_likelihood, ekf_maximize_likelihood, ekf_rts_pass};
pub use pf::{pf_filter, pf_loglik, systematic_resample, ParticleSet, Proposal};
