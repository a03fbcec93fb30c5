//! Forward sensitivity equations for the sigma-point filter log-likelihood.

use crate::cubature::{CubatureRule, WeightKind};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_derivative, cholesky_jittered, log_det, spd_factor, symmetrize, Matrix, Vector};
use crate::models::StateSpaceModel;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Running derivatives of the filter quantities with respect to one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState {
    pub dm: Vector,
    pub dp: Matrix,
    pub dl: Matrix,
    pub dmu: Vector,
    pub ds: Matrix,
    pub dv: Vector,
    pub dc: Matrix,
    pub dk: Matrix,
    /// Accumulated `∂ℒ_k/∂θᵢ`.
    pub dloglik: f64,
}

impl SensitivityState {
    fn new(dm: Vector, dp: Matrix, d: usize) -> Self {
        let n = dm.len();
        SensitivityState {
            dm,
            dp,
            dl: Matrix::zeros(n, n),
            dmu: Vector::zeros(d),
            ds: Matrix::zeros(d, d),
            dv: Vector::zeros(d),
            dc: Matrix::zeros(n, d),
            dk: Matrix::zeros(n, d),
            dloglik: 0.0,
        }
    }
}

/// Sigma-points of `N(m, P)` and their derivatives for every parameter.
fn placed(rule: &CubatureRule, m: &Vector, p: &Matrix, sens: &mut [SensitivityState]) -> Result<Matrix> {
    let l = cholesky_jittered(p)?;
    for s in sens.iter_mut() {
        s.dl = cholesky_derivative(&l, &s.dp);
    }
    rule.place(m, &l)
}

fn point_derivative(rule: &CubatureRule, s: &SensitivityState, j: usize) -> Vector {
    &s.dm + &s.dl * rule.point(j)
}

/// `Σ wᵢ (aᵢ − ā)(bᵢ − b̄)ᵀ` over the columns of `a` and `b`.
fn cross(a: &Matrix, am: &Vector, b: &Matrix, bm: &Vector, w: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), b.nrows());
    for (j, &wj) in w.iter().enumerate() {
        let da = a.column(j) - am;
        let db = b.column(j) - bm;
        out.ger(wj, &da, &db, 1.0);
    }
    out
}

/// Log-likelihood and its gradient via the forward sensitivity recursion.
///
/// The value agrees with [`filter_pass`](crate::gauss::filter_pass) to rounding.
pub fn loglik_and_gradient_sensitivity<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &Vector,
    ys: &[Vector],
    rule: &CubatureRule,
) -> Result<(f64, Vector)> {
    let n = model.state_dim();
    let d = model.meas_dim();
    let np = model.param_dim();
    if rule.dim != n {
        return Err(Error::DimensionMismatch(format!("rule of dimension {} for state of dimension {n}", rule.dim)));
    }
    if theta.len() != np {
        return Err(Error::DimensionMismatch(format!("θ has {} entries, model expects {np}", theta.len())));
    }
    let wm = rule.weights(WeightKind::Mean);
    let wc = rule.weights(WeightKind::Covariance);
    let q = model.process_cov(theta);
    let r = model.measurement_cov(theta);
    let dq = model.process_cov_derivatives(theta);
    let dr = model.measurement_cov_derivatives(theta);
    let dm0 = model.initial_mean_jacobian(theta);
    let dp0 = model.initial_cov_derivatives(theta);

    let mut m = model.initial_mean(theta);
    let mut p = symmetrize(&model.initial_cov(theta));
    let mut sens: Vec<SensitivityState> =
        (0..np).map(|i| SensitivityState::new(dm0.column(i).into_owned(), symmetrize(&dp0[i]), d)).collect();
    let mut total = 0.0;

    for (idx, y) in ys.iter().enumerate() {
        let k = idx + 1;
        let at = |e: Error| e.at_step(k);

        // Prediction.
        let x = placed(rule, &m, &p, &mut sens).map_err(at)?;
        let npts = x.ncols();
        let mut fx = Matrix::zeros(n, npts);
        let mut jx = Vec::with_capacity(npts);
        let mut jt = Vec::with_capacity(npts);
        for j in 0..npts {
            let xj = x.column(j).into_owned();
            fx.set_column(j, &model.transition(&xj, k - 1, theta));
            jx.push(model.transition_jacobian(&xj, k - 1, theta));
            jt.push(model.transition_param_jacobian(&xj, k - 1, theta));
        }
        let mp = &fx * Vector::from_column_slice(wm);
        let pp = symmetrize(&(cross(&fx, &mp, &fx, &mp, wc) + &q));
        for (i, s) in sens.iter_mut().enumerate() {
            let mut dfx = Matrix::zeros(n, npts);
            for j in 0..npts {
                let dfj = &jx[j] * point_derivative(rule, s, j) + jt[j].column(i);
                dfx.set_column(j, &dfj);
            }
            let dmp = &dfx * Vector::from_column_slice(wm);
            let t = cross(&dfx, &dmp, &fx, &mp, wc);
            s.dm = dmp;
            s.dp = symmetrize(&(&t + t.transpose() + &dq[i]));
        }

        // Update.
        let x = placed(rule, &mp, &pp, &mut sens).map_err(at)?;
        let mut hx = Matrix::zeros(d, npts);
        let mut hj = Vec::with_capacity(npts);
        let mut ht = Vec::with_capacity(npts);
        for j in 0..npts {
            let xj = x.column(j).into_owned();
            hx.set_column(j, &model.measurement(&xj, theta));
            hj.push(model.measurement_jacobian(&xj, theta));
            ht.push(model.measurement_param_jacobian(&xj, theta));
        }
        let mu = &hx * Vector::from_column_slice(wm);
        let s_mat = symmetrize(&(cross(&hx, &mu, &hx, &mu, wc) + &r));
        let c = cross(&x, &mp, &hx, &mu, wc);
        let sch = spd_factor(&s_mat, "innovation covariance").map_err(at)?;
        let sinv = sch.inverse();
        let gain = &c * &sinv;
        let v = model.residual(y - &mu);
        let sv = &sinv * &v;
        total += -0.5 * (d as f64 * LN_2PI + log_det(&sch)) - 0.5 * v.dot(&sv);

        for (i, s) in sens.iter_mut().enumerate() {
            let mut dhx = Matrix::zeros(d, npts);
            let mut dxs = Matrix::zeros(n, npts);
            for j in 0..npts {
                let dxj = point_derivative(rule, s, j);
                dhx.set_column(j, &(&hj[j] * &dxj + ht[j].column(i)));
                dxs.set_column(j, &dxj);
            }
            let dmu = &dhx * Vector::from_column_slice(wm);
            let t = cross(&dhx, &dmu, &hx, &mu, wc);
            let ds = symmetrize(&(&t + t.transpose() + &dr[i]));
            let dc = cross(&dxs, &s.dm, &hx, &mu, wc) + cross(&x, &mp, &dhx, &dmu, wc);
            let dk = &dc * &sinv - &gain * &ds * &sinv;
            let dv = -&dmu;
            let sdv = &sinv * &dv;
            let sds = &sinv * &ds;
            s.dloglik += -0.5 * sds.trace() - v.dot(&sdv) + 0.5 * sv.dot(&(&ds * &sv));
            let ksk = &dk * &s_mat * gain.transpose();
            s.dm = &s.dm + &dk * &v + &gain * &dv;
            s.dp = symmetrize(&(&s.dp - &ksk - ksk.transpose() - &gain * &ds * gain.transpose()));
            s.dmu = dmu;
            s.ds = ds;
            s.dv = dv;
            s.dc = dc;
            s.dk = dk;
        }
        m = &mp + &gain * &v;
        p = symmetrize(&(&pp - &gain * &s_mat * gain.transpose()));
    }
    Ok((total, Vector::from_iterator(np, sens.iter().map(|s| s.dloglik))))
}

/// `∂ℒ_T/∂θ` via the sensitivity recursion.
pub fn loglik_gradient_sensitivity<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &Vector,
    ys: &[Vector],
    rule: &CubatureRule,
) -> Result<Vector> {
    loglik_and_gradient_sensitivity(model, theta, ys, rule).map(|(_, g)| g)
}
