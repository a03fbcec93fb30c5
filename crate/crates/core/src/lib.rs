//! Sigma-point (assumed-density Gaussian) filtering and smoothing with
//! interchangeable cubature rules, plus likelihood-based parameter estimation
//! for nonlinear state-space models with additive Gaussian noise:
//!
//! ```text
//! x_k = f(x_{k-1}, θ) + q_{k-1},   q ~ N(0, Q(θ))
//! y_k = h(x_k, θ) + r_k,           r ~ N(0, R(θ))
//! x_0 ~ N(m_0(θ), P_0(θ))
//! ```
//!
//! * [`cubature`] builds unit sigma-point rules.
//! * [`gauss`] runs the filter, the Rauch–Tung–Striebel smoother and pairwise
//!   smoothing expectations for any rule.
//! * [`estimate`] evaluates the likelihood and its gradient (sensitivity
//!   equations or Fisher's identity), the EM Q-function, closed-form M-steps,
//!   and a BFGS optimizer.
//! * [`models`] holds the model trait and the benchmark models.
//! * [`baselines`] has the extended Kalman filter/smoother and a particle filter.

pub mod baselines;
pub mod cubature;
pub mod error;
pub mod estimate;
pub mod gauss;
pub mod linalg;
pub mod models;
pub mod rng;

pub use cubature::{build_rule, cached_rule, point_count, CubatureRule, Scheme, SymmetricOrder, WeightKind};
pub use error::{Error, Result};
pub use gauss::{FilterResult, FilterStep, GaussState, PairwiseJoint, SmootherResult, SmootherStep};
pub use linalg::{Matrix, Vector};
pub use models::{SimOutput, StateSpaceModel};
