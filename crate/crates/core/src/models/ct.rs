use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

use super::{wrap_angle, CovFree, FreeBlocks, LinearInParams, LinearParams, StateSpaceModel};

/// Below this `|ωΔt|` the transition uses its Taylor expansion.
const SERIES_THRESHOLD: f64 = 1e-4;

/// Parameters of the coordinated-turn model that can be exposed in `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CtParam {
    /// Noise standard deviation of sensor `i`, `R_ii = θ²`.
    SqrtR(usize),
    /// Noise variance of sensor `i`.
    R(usize),
}

/// Five-state coordinated-turn target `(x₁, x₂, ẋ₁, ẋ₂, ω)` observed by
/// bearings-only sensors `h_i(x) = atan2(x₂ − s₂ᵢ, x₁ − s₁ᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatedTurn {
    pub qc: f64,
    pub qw: f64,
    pub dt: f64,
    pub sensors: Vec<[f64; 2]>,
    /// Measurement noise variances (diagonal of `R`).
    pub r_diag: Vec<f64>,
    pub m0: Vector,
    pub p0: Matrix,
    pub free: Vec<CtParam>,
}

impl Default for CoordinatedTurn {
    fn default() -> Self {
        CoordinatedTurn {
            qc: 0.1,
            qw: 0.1,
            dt: 0.01,
            sensors: vec![[-1.0, 0.5], [1.0, 1.0]],
            r_diag: vec![0.05f64.powi(2), 0.1f64.powi(2)],
            m0: Vector::from_vec(vec![2.0, 0.0, 0.0, 0.0, 0.0]),
            p0: Matrix::from_diagonal(&Vector::from_vec(vec![0.25, 0.25, 0.25, 0.25, 1.0])),
            free: vec![CtParam::SqrtR(0)],
        }
    }
}

/// `sin(ωΔt)/ω`, `(cos(ωΔt) − 1)/ω` and their ω-derivatives.
struct TurnTerms {
    s: f64,
    c: f64,
    ds: f64,
    dc: f64,
}

fn turn_terms(w: f64, dt: f64) -> TurnTerms {
    let u = w * dt;
    if u.abs() < SERIES_THRESHOLD {
        let u2 = u * u;
        TurnTerms {
            s: dt * (1.0 - u2 / 6.0 + u2 * u2 / 120.0),
            c: dt * (-u / 2.0 + u * u2 / 24.0 - u * u2 * u2 / 720.0),
            ds: dt * dt * (-u / 3.0 + u * u2 / 30.0),
            dc: dt * dt * (-0.5 + u2 / 8.0 - u2 * u2 / 144.0),
        }
    } else {
        let (su, cu) = u.sin_cos();
        TurnTerms {
            s: su / w,
            c: (cu - 1.0) / w,
            ds: (dt * cu * w - su) / (w * w),
            dc: (-dt * su * w - (cu - 1.0)) / (w * w),
        }
    }
}

impl CoordinatedTurn {
    pub fn theta(&self) -> Vector {
        Vector::from_iterator(
            self.free.len(),
            self.free.iter().map(|p| match *p {
                CtParam::SqrtR(i) => self.r_diag[i].sqrt(),
                CtParam::R(i) => self.r_diag[i],
            }),
        )
    }

    fn r_values(&self, theta: &Vector) -> Vec<f64> {
        let mut r = self.r_diag.clone();
        for (k, p) in self.free.iter().enumerate() {
            match *p {
                CtParam::SqrtR(i) => r[i] = theta[k] * theta[k],
                CtParam::R(i) => r[i] = theta[k],
            }
        }
        r
    }

    /// The state transition matrix at turn rate `ω`.
    pub fn transition_matrix(&self, w: f64) -> Matrix {
        let t = turn_terms(w, self.dt);
        let (su, cu) = (w * self.dt).sin_cos();
        #[rustfmt::skip]
        let m = Matrix::from_row_slice(5, 5, &[
            1.0, 0.0, t.s, t.c, 0.0,
            0.0, 1.0, -t.c, t.s, 0.0,
            0.0, 0.0, cu, -su, 0.0,
            0.0, 0.0, su, cu, 0.0,
            0.0, 0.0, 0.0, 0.0, 1.0,
        ]);
        m
    }

    fn q_matrix(&self) -> Matrix {
        let (qc, dt) = (self.qc, self.dt);
        let a = qc * dt.powi(3) / 3.0;
        let b = qc * dt * dt / 2.0;
        let c = qc * dt;
        #[rustfmt::skip]
        let q = Matrix::from_row_slice(5, 5, &[
            a, 0.0, b, 0.0, 0.0,
            0.0, a, 0.0, b, 0.0,
            b, 0.0, c, 0.0, 0.0,
            0.0, b, 0.0, c, 0.0,
            0.0, 0.0, 0.0, 0.0, self.qw * dt,
        ]);
        q
    }
}

impl StateSpaceModel for CoordinatedTurn {
    fn state_dim(&self) -> usize {
        5
    }
    fn meas_dim(&self) -> usize {
        self.sensors.len()
    }
    fn param_dim(&self) -> usize {
        self.free.len()
    }
    fn transition(&self, x: &Vector, _k: usize, _theta: &Vector) -> Vector {
        self.transition_matrix(x[4]) * x
    }
    fn measurement(&self, x: &Vector, _theta: &Vector) -> Vector {
        Vector::from_iterator(self.sensors.len(), self.sensors.iter().map(|s| (x[1] - s[1]).atan2(x[0] - s[0])))
    }
    fn process_cov(&self, _theta: &Vector) -> Matrix {
        self.q_matrix()
    }
    fn measurement_cov(&self, theta: &Vector) -> Matrix {
        Matrix::from_diagonal(&Vector::from_vec(self.r_values(theta)))
    }
    fn initial_mean(&self, _theta: &Vector) -> Vector {
        self.m0.clone()
    }
    fn initial_cov(&self, _theta: &Vector) -> Matrix {
        self.p0.clone()
    }
    fn transition_jacobian(&self, x: &Vector, _k: usize, _theta: &Vector) -> Matrix {
        let w = x[4];
        let t = turn_terms(w, self.dt);
        let (su, cu) = (w * self.dt).sin_cos();
        let (vx, vy) = (x[2], x[3]);
        let mut j = self.transition_matrix(w);
        j[(0, 4)] = t.ds * vx + t.dc * vy;
        j[(1, 4)] = -t.dc * vx + t.ds * vy;
        j[(2, 4)] = self.dt * (-su * vx - cu * vy);
        j[(3, 4)] = self.dt * (cu * vx - su * vy);
        j
    }
    fn measurement_jacobian(&self, x: &Vector, _theta: &Vector) -> Matrix {
        let mut j = Matrix::zeros(self.sensors.len(), 5);
        for (i, s) in self.sensors.iter().enumerate() {
            let dx = x[0] - s[0];
            let dy = x[1] - s[1];
            let r2 = dx * dx + dy * dy;
            j[(i, 0)] = -dy / r2;
            j[(i, 1)] = dx / r2;
        }
        j
    }
    fn transition_param_jacobian(&self, _x: &Vector, _k: usize, _theta: &Vector) -> Matrix {
        Matrix::zeros(5, self.free.len())
    }
    fn measurement_param_jacobian(&self, _x: &Vector, _theta: &Vector) -> Matrix {
        Matrix::zeros(self.sensors.len(), self.free.len())
    }
    fn process_cov_derivatives(&self, _theta: &Vector) -> Vec<Matrix> {
        vec![Matrix::zeros(5, 5); self.free.len()]
    }
    fn measurement_cov_derivatives(&self, theta: &Vector) -> Vec<Matrix> {
        let d = self.sensors.len();
        self.free
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let mut m = Matrix::zeros(d, d);
                match *p {
                    CtParam::SqrtR(i) => m[(i, i)] = 2.0 * theta[k],
                    CtParam::R(i) => m[(i, i)] = 1.0,
                }
                m
            })
            .collect()
    }
    fn initial_mean_jacobian(&self, _theta: &Vector) -> Matrix {
        Matrix::zeros(5, self.free.len())
    }
    fn initial_cov_derivatives(&self, _theta: &Vector) -> Vec<Matrix> {
        vec![Matrix::zeros(5, 5); self.free.len()]
    }
    fn residual(&self, v: Vector) -> Vector {
        v.map(wrap_angle)
    }
    fn linear_form(&self) -> Option<&dyn LinearInParams> {
        Some(self)
    }
    fn param_is_positive(&self, _i: usize) -> bool {
        true
    }
}

/// `f̃ = f`, `A = I`; `h̃ = h`, `H = I`; only diagonal entries of `R` are free.
impl LinearInParams for CoordinatedTurn {
    fn basis_f(&self, x: &Vector, k: usize) -> Vector {
        self.transition(x, k, &Vector::zeros(0))
    }
    fn basis_h(&self, x: &Vector) -> Vector {
        self.measurement(x, &Vector::zeros(0))
    }
    fn params(&self, theta: &Vector) -> LinearParams {
        let d = self.sensors.len();
        LinearParams {
            a: Matrix::identity(5, 5),
            h: Matrix::identity(d, d),
            q: self.q_matrix(),
            r: self.measurement_cov(theta),
            m0: self.m0.clone(),
            p0: self.p0.clone(),
        }
    }
    fn free(&self) -> FreeBlocks {
        let idx: Vec<usize> = self
            .free
            .iter()
            .map(|p| match *p {
                CtParam::SqrtR(i) | CtParam::R(i) => i,
            })
            .collect();
        FreeBlocks { r: if idx.is_empty() { CovFree::Fixed } else { CovFree::Diagonal(idx) }, ..Default::default() }
    }
    fn to_theta(&self, p: &LinearParams, theta: &Vector) -> Vector {
        let mut out = theta.clone();
        for (k, par) in self.free.iter().enumerate() {
            out[k] = match *par {
                CtParam::SqrtR(i) => p.r[(i, i)].max(0.0).sqrt(),
                CtParam::R(i) => p.r[(i, i)],
            };
        }
        out
    }
}

/// Shrink the prior on the initial location to standard deviation `sigma` per
/// coordinate, moving its mean linearly from the original `m₀` (at σ = 0.5)
/// toward the true initial location (as σ → 0).
pub fn initial_uncertainty_sweep(model: &CoordinatedTurn, sigma: f64, true_x0: &Vector) -> Result<CoordinatedTurn> {
    if !(sigma > 0.0 && sigma <= 0.5) {
        return Err(Error::InvalidArgument(format!("initial location sd {sigma} not in (0, 0.5]")));
    }
    let mut out = model.clone();
    let frac = sigma / 0.5;
    for i in 0..2 {
        out.p0[(i, i)] = sigma * sigma;
        out.m0[i] = frac * model.m0[i] + (1.0 - frac) * true_x0[i];
    }
    Ok(out)
}
