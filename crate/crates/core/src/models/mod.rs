//! State-space model abstraction, benchmark models and trajectory simulation.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::linalg::{cholesky_jittered, Matrix, Vector};
use crate::rng::{self, Role};

mod ct;
mod linear;
mod ungm;

pub use ct::{initial_uncertainty_sweep, CoordinatedTurn, CtParam};
pub use linear::{LinearGaussian, LinearParam};
pub use ungm::{Ungm, UngmParam};

/// Nonlinear model with additive Gaussian noise, parameterized by `θ ∈ Rᵐ`.
///
/// `transition(x, k, θ)` maps the state at step `k` to the mean of the state at
/// step `k + 1`, so time-varying dynamics see the index of the state being
/// propagated.
pub trait StateSpaceModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn meas_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    fn transition(&self, x: &Vector, k: usize, theta: &Vector) -> Vector;
    fn measurement(&self, x: &Vector, theta: &Vector) -> Vector;
    fn process_cov(&self, theta: &Vector) -> Matrix;
    fn measurement_cov(&self, theta: &Vector) -> Matrix;
    fn initial_mean(&self, theta: &Vector) -> Vector;
    fn initial_cov(&self, theta: &Vector) -> Matrix;

    /// `∂f/∂x`, `n × n`.
    fn transition_jacobian(&self, x: &Vector, k: usize, theta: &Vector) -> Matrix;
    /// `∂h/∂x`, `d × n`.
    fn measurement_jacobian(&self, x: &Vector, theta: &Vector) -> Matrix;
    /// `∂f/∂θ`, `n × m`.
    fn transition_param_jacobian(&self, x: &Vector, k: usize, theta: &Vector) -> Matrix;
    /// `∂h/∂θ`, `d × m`.
    fn measurement_param_jacobian(&self, x: &Vector, theta: &Vector) -> Matrix;
    /// `∂Q/∂θᵢ` for each parameter.
    fn process_cov_derivatives(&self, theta: &Vector) -> Vec<Matrix>;
    fn measurement_cov_derivatives(&self, theta: &Vector) -> Vec<Matrix>;
    /// `∂m₀/∂θ`, `n × m`.
    fn initial_mean_jacobian(&self, theta: &Vector) -> Matrix;
    fn initial_cov_derivatives(&self, theta: &Vector) -> Vec<Matrix>;

    /// Post-processing of an innovation `y − μ` (angle wrapping for bearings).
    fn residual(&self, v: Vector) -> Vector {
        v
    }

    /// `H` when `h(x) = Hx` exactly; enables the optimal particle proposal.
    fn linear_measurement(&self, _theta: &Vector) -> Option<Matrix> {
        None
    }

    /// Linear-in-parameters view enabling the closed-form M-step.
    fn linear_form(&self) -> Option<&dyn LinearInParams> {
        None
    }

    /// Whether `θᵢ` must stay positive (standard deviations, variances, scales).
    fn param_is_positive(&self, _i: usize) -> bool {
        false
    }
}

/// Blocks of `{A, H, Q, R, m₀, P₀}` in a linear-in-parameters model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub a: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub m0: Vector,
    pub p0: Matrix,
}

/// How a covariance block is re-estimated in the M-step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CovFree {
    #[default]
    Fixed,
    Full,
    /// `s · C_base` with only the scalar `s` free.
    Scale,
    /// Only these diagonal entries move (the block must be diagonal).
    Diagonal(Vec<usize>),
}

/// Which blocks of a linear-in-parameters model are free.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FreeBlocks {
    pub a: bool,
    pub h: bool,
    pub q: CovFree,
    pub r: CovFree,
    pub m0: bool,
    pub p0: bool,
}

/// `x_k = A f̃(x_{k−1}) + q`, `y_k = H h̃(x_k) + r`.
pub trait LinearInParams: Send + Sync {
    fn basis_f(&self, x: &Vector, k: usize) -> Vector;
    fn basis_h(&self, x: &Vector) -> Vector;
    fn params(&self, theta: &Vector) -> LinearParams;
    fn free(&self) -> FreeBlocks;
    /// Map updated blocks back to a parameter vector (non-free blocks ignored).
    fn to_theta(&self, params: &LinearParams, theta: &Vector) -> Vector;
    /// Whether every parameter in `θ` belongs to a block the closed-form M-step updates.
    fn closed_form_covers(&self) -> bool {
        true
    }
}

/// Simulated trajectory: `states[0..=T]`, `measurements[0..T]` for `y_1..y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub states: Vec<Vector>,
    pub measurements: Vec<Vector>,
    pub seed: u64,
    pub trajectory: u64,
}

/// Draw `x₀ ~ N(m₀, P₀)` and iterate the model for `steps` steps using the
/// counter-keyed streams of `(seed, trajectory)`.
pub fn simulate<M: StateSpaceModel + ?Sized>(model: &M, theta: &Vector, steps: usize, seed: u64, trajectory: u64) -> SimOutput {
    let l0 = cholesky_jittered(&model.initial_cov(theta)).expect("initial covariance must be PSD");
    let lq = cholesky_jittered(&model.process_cov(theta)).expect("process covariance must be PSD");
    let lr = cholesky_jittered(&model.measurement_cov(theta)).expect("measurement covariance must be PSD");
    let mut x = rng::gaussian(&mut rng::stream(seed, trajectory, 0, Role::InitialState), &model.initial_mean(theta), &l0);
    let mut states = Vec::with_capacity(steps + 1);
    let mut measurements = Vec::with_capacity(steps);
    states.push(x.clone());
    for k in 1..=steps {
        let f = model.transition(&x, k - 1, theta);
        x = rng::gaussian(&mut rng::stream(seed, trajectory, k as u64, Role::ProcessNoise), &f, &lq);
        let h = model.measurement(&x, theta);
        let y = rng::gaussian(&mut rng::stream(seed, trajectory, k as u64, Role::MeasurementNoise), &h, &lr);
        states.push(x.clone());
        measurements.push(y);
    }
    SimOutput { states, measurements, seed, trajectory }
}

/// Wrap an angle into `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    let r = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    if r <= -PI {
        r + 2.0 * PI
    } else if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Wraps a model and counts evaluations of `f`, `h` and their Jacobians.
pub struct Counted<'a, M: ?Sized> {
    inner: &'a M,
    evals: AtomicU64,
}

impl<'a, M: StateSpaceModel + ?Sized> Counted<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Counted { inner, evals: AtomicU64::new(0) }
    }

    pub fn evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    fn tick(&self) {
        self.evals.fetch_add(1, Ordering::Relaxed);
    }
}

impl<M: StateSpaceModel + ?Sized> StateSpaceModel for Counted<'_, M> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn meas_dim(&self) -> usize {
        self.inner.meas_dim()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn transition(&self, x: &Vector, k: usize, theta: &Vector) -> Vector {
        self.tick();
        self.inner.transition(x, k, theta)
    }
    fn measurement(&self, x: &Vector, theta: &Vector) -> Vector {
        self.tick();
        self.inner.measurement(x, theta)
    }
    fn process_cov(&self, theta: &Vector) -> Matrix {
        self.inner.process_cov(theta)
    }
    fn measurement_cov(&self, theta: &Vector) -> Matrix {
        self.inner.measurement_cov(theta)
    }
    fn initial_mean(&self, theta: &Vector) -> Vector {
        self.inner.initial_mean(theta)
    }
    fn initial_cov(&self, theta: &Vector) -> Matrix {
        self.inner.initial_cov(theta)
    }
    fn transition_jacobian(&self, x: &Vector, k: usize, theta: &Vector) -> Matrix {
        self.tick();
        self.inner.transition_jacobian(x, k, theta)
    }
    fn measurement_jacobian(&self, x: &Vector, theta: &Vector) -> Matrix {
        self.tick();
        self.inner.measurement_jacobian(x, theta)
    }
    fn transition_param_jacobian(&self, x: &Vector, k: usize, theta: &Vector) -> Matrix {
        self.inner.transition_param_jacobian(x, k, theta)
    }
    fn measurement_param_jacobian(&self, x: &Vector, theta: &Vector) -> Matrix {
        self.inner.measurement_param_jacobian(x, theta)
    }
    fn process_cov_derivatives(&self, theta: &Vector) -> Vec<Matrix> {
        self.inner.process_cov_derivatives(theta)
    }
    fn measurement_cov_derivatives(&self, theta: &Vector) -> Vec<Matrix> {
        self.inner.measurement_cov_derivatives(theta)
    }
    fn initial_mean_jacobian(&self, theta: &Vector) -> Matrix {
        self.inner.initial_mean_jacobian(theta)
    }
    fn initial_cov_derivatives(&self, theta: &Vector) -> Vec<Matrix> {
        self.inner.initial_cov_derivatives(theta)
    }
    fn residual(&self, v: Vector) -> Vector {
        self.inner.residual(v)
    }
    fn linear_measurement(&self, theta: &Vector) -> Option<Matrix> {
        self.inner.linear_measurement(theta)
    }
    fn linear_form(&self) -> Option<&dyn LinearInParams> {
        self.inner.linear_form()
    }
    fn param_is_positive(&self, i: usize) -> bool {
        self.inner.param_is_positive(i)
    }
}
