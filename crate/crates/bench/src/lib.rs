//! Shared fixtures for the benchmarks.

use sigma_core::models::{simulate, CoordinatedTurn};
use sigma_core::{StateSpaceModel, Vector};

/// The default coordinated-turn model with a simulated measurement record.
pub fn ct_fixture(steps: usize) -> (CoordinatedTurn, Vector, Vec<Vector>) {
    let model = CoordinatedTurn::default();
    let theta = model.theta();
    let ys = simulate(&model, &theta, steps, 2024, 0).measurements;
    debug_assert_eq!(ys.len(), steps);
    debug_assert_eq!(model.param_dim(), theta.len());
    (model, theta, ys)
}
