//! Expectation–maximization: the Gaussian-smoother Q-function, its gradient
//! (Fisher's identity), sufficient statistics and the closed-form M-step.

use crate::cubature::{CubatureRule, WeightKind};
use crate::error::{Error, Result};
use crate::gauss::{filter_pass, pairwise_joint, rts_pass, SmootherResult};
use crate::linalg::{cholesky_jittered, log_det, spd_factor, symmetrize, Matrix, Vector};
use crate::models::{CovFree, FreeBlocks, LinearInParams, LinearParams, StateSpaceModel};

use super::optim::{minimize, Objective, OptimizerConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Sigma-points of the smoothing distribution at `θⁿ`, frozen for evaluating
/// `Q(θ, θⁿ)` at arbitrary `θ`.
#[derive(Debug, Clone)]
pub struct QFunction {
    n: usize,
    ys: Vec<Vector>,
    /// Pairwise points `(x_k, x_{k−1})` for `k = 1 … T`.
    pairs: Vec<Matrix>,
    pair_weights: Vec<f64>,
    /// Single-state points of `x_k` for `k = 1 … T`.
    singles: Vec<Matrix>,
    single_weights: Vec<f64>,
    m0: Vector,
    p0: Matrix,
}

impl QFunction {
    pub fn new(smoother: &SmootherResult, ys: &[Vector], rule: &CubatureRule, rule2n: &CubatureRule) -> Result<Self> {
        let t = smoother.horizon();
        if ys.len() != t {
            return Err(Error::DimensionMismatch(format!("{} measurements for a smoother of horizon {t}", ys.len())));
        }
        let first = smoother.smoothed(0);
        let n = first.dim();
        if rule.dim != n || rule2n.dim != 2 * n {
            return Err(Error::DimensionMismatch(format!(
                "rules of dimension {} and {} for state dimension {n}",
                rule.dim, rule2n.dim
            )));
        }
        let mut pairs = Vec::with_capacity(t);
        let mut singles = Vec::with_capacity(t);
        for k in 1..=t {
            let j = pairwise_joint(smoother, k)?;
            pairs.push(j.state.sigma_points(rule2n).map_err(|e| e.at_step(k))?);
            singles.push(smoother.smoothed(k).sigma_points(rule).map_err(|e| e.at_step(k))?);
        }
        Ok(QFunction {
            n,
            ys: ys.to_vec(),
            pairs,
            pair_weights: rule2n.weights(WeightKind::Mean).to_vec(),
            singles,
            single_weights: rule.weights(WeightKind::Mean).to_vec(),
            m0: first.mean.clone(),
            p0: first.cov.clone(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.ys.len()
    }

    pub fn value<M: StateSpaceModel + ?Sized>(&self, model: &M, theta: &Vector) -> Result<f64> {
        self.eval(model, theta, false).map(|(v, _)| v)
    }

    /// `Q(θ, θⁿ)` and `∂Q/∂θ` with the smoothing moments held at `θⁿ`.
    pub fn value_and_grad<M: StateSpaceModel + ?Sized>(&self, model: &M, theta: &Vector) -> Result<(f64, Vector)> {
        self.eval(model, theta, true)
    }

    fn eval<M: StateSpaceModel + ?Sized>(&self, model: &M, theta: &Vector, grad: bool) -> Result<(f64, Vector)> {
        let n = self.n;
        let d = model.meas_dim();
        let np = model.param_dim();
        let t = self.horizon() as f64;
        let mut g = Vector::zeros(np);

        // Initial-state term.
        let m0 = model.initial_mean(theta);
        let p0 = symmetrize(&model.initial_cov(theta));
        let p0ch = spd_factor(&p0, "initial covariance")?;
        let diff = &self.m0 - &m0;
        let big_m0 = &self.p0 + &diff * diff.transpose();
        let p0inv = p0ch.inverse();
        let mut value = -0.5 * (n as f64 * LN_2PI + log_det(&p0ch)) - 0.5 * (&p0inv * &big_m0).trace();
        if grad {
            let dm0 = model.initial_mean_jacobian(theta);
            let dp0 = model.initial_cov_derivatives(theta);
            let a = &p0inv * &big_m0 * &p0inv;
            let pd = &p0inv * &diff;
            for i in 0..np {
                g[i] += -0.5 * (&p0inv * &dp0[i]).trace() + 0.5 * (&a * &dp0[i]).trace() + pd.dot(&dm0.column(i));
            }
        }
        if self.horizon() == 0 {
            return Ok((value, g));
        }

        // Dynamic term over pairwise points.
        let q = symmetrize(&model.process_cov(theta));
        let qch = spd_factor(&q, "process covariance")?;
        let qinv = qch.inverse();
        let mut ef = Matrix::zeros(n, n);
        let mut gf = Vector::zeros(np);
        for (idx, pts) in self.pairs.iter().enumerate() {
            let k = idx + 1;
            for (j, &w) in self.pair_weights.iter().enumerate() {
                let col = pts.column(j);
                let xk = col.rows(0, n).into_owned();
                let xp = col.rows(n, n).into_owned();
                let e = xk - model.transition(&xp, k - 1, theta);
                ef.ger(w, &e, &e, 1.0);
                if grad && np > 0 {
                    let jt = model.transition_param_jacobian(&xp, k - 1, theta);
                    gf.axpy(w, &(jt.transpose() * (&qinv * &e)), 1.0);
                }
            }
        }
        value += -0.5 * t * (n as f64 * LN_2PI + log_det(&qch)) - 0.5 * (&qinv * &ef).trace();

        // Measurement term over single-state points.
        let r = symmetrize(&model.measurement_cov(theta));
        let rch = spd_factor(&r, "measurement covariance")?;
        let rinv = rch.inverse();
        let mut eh = Matrix::zeros(d, d);
        let mut gh = Vector::zeros(np);
        for (pts, y) in self.singles.iter().zip(&self.ys) {
            for (j, &w) in self.single_weights.iter().enumerate() {
                let x = pts.column(j).into_owned();
                let e = y - model.measurement(&x, theta);
                eh.ger(w, &e, &e, 1.0);
                if grad && np > 0 {
                    let jt = model.measurement_param_jacobian(&x, theta);
                    gh.axpy(w, &(jt.transpose() * (&rinv * &e)), 1.0);
                }
            }
        }
        value += -0.5 * t * (d as f64 * LN_2PI + log_det(&rch)) - 0.5 * (&rinv * &eh).trace();

        if grad {
            let dq = model.process_cov_derivatives(theta);
            let dr = model.measurement_cov_derivatives(theta);
            let aq = &qinv * &ef * &qinv;
            let ar = &rinv * &eh * &rinv;
            for i in 0..np {
                g[i] += -0.5 * t * (&qinv * &dq[i]).trace() + 0.5 * (&aq * &dq[i]).trace() + gf[i];
                g[i] += -0.5 * t * (&rinv * &dr[i]).trace() + 0.5 * (&ar * &dr[i]).trace() + gh[i];
            }
        }
        Ok((value, g))
    }
}

/// `Q(θ, θⁿ)` for smoother results computed at `θⁿ`.
pub fn q_function<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &Vector,
    smoother: &SmootherResult,
    ys: &[Vector],
    rule: &CubatureRule,
    rule2n: &CubatureRule,
) -> Result<f64> {
    QFunction::new(smoother, ys, rule, rule2n)?.value(model, theta)
}

/// Gradient of the log-likelihood by Fisher's identity, `∂Q(θ, θⁿ)/∂θ` at `θⁿ = θ`.
pub fn loglik_gradient_fisher<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &Vector,
    ys: &[Vector],
    rule: &CubatureRule,
    rule2n: &CubatureRule,
) -> Result<Vector> {
    let f = filter_pass(model, theta, ys, rule)?;
    let s = rts_pass(&f, model, theta, rule)?;
    QFunction::new(&s, ys, rule, rule2n)?.value_and_grad(model, theta).map(|(_, g)| g)
}

/// Averaged sufficient statistics of a linear-in-parameters model.
#[derive(Debug, Clone, PartialEq)]
pub struct EMStatistics {
    /// `avg E[x_k x_kᵀ]`.
    pub sigma: Matrix,
    /// `avg E[f̃(x_{k−1}) f̃(x_{k−1})ᵀ]`.
    pub phi: Matrix,
    /// `avg E[h̃(x_k) h̃(x_k)ᵀ]`.
    pub theta: Matrix,
    /// `avg y_k E[h̃(x_k)]ᵀ`.
    pub b: Matrix,
    /// `avg E[x_k f̃(x_{k−1})ᵀ]`.
    pub c: Matrix,
    /// `avg y_k y_kᵀ`.
    pub d: Matrix,
    pub m0: Vector,
    pub p0: Matrix,
    pub horizon: usize,
}

fn outer_expect(x: &Matrix, w: &[f64], mut g: impl FnMut(&Vector) -> Vector, mut h: impl FnMut(&Vector) -> Vector) -> Matrix {
    let mut acc: Option<Matrix> = None;
    for (j, &wj) in w.iter().enumerate() {
        let xj = x.column(j).into_owned();
        let a = g(&xj);
        let b = h(&xj);
        let acc = acc.get_or_insert_with(|| Matrix::zeros(a.len(), b.len()));
        acc.ger(wj, &a, &b, 1.0);
    }
    acc.unwrap_or_else(|| Matrix::zeros(0, 0))
}

pub fn em_statistics(
    smoother: &SmootherResult,
    ys: &[Vector],
    lin: &dyn LinearInParams,
    rule: &CubatureRule,
    rule2n: &CubatureRule,
) -> Result<EMStatistics> {
    let t = smoother.horizon();
    if t == 0 {
        return Err(Error::InvalidArgument("EM statistics need at least one measurement".into()));
    }
    if ys.len() != t {
        return Err(Error::DimensionMismatch(format!("{} measurements for a smoother of horizon {t}", ys.len())));
    }
    let n = smoother.smoothed(0).dim();
    let w = rule.weights(WeightKind::Mean);
    let w2 = rule2n.weights(WeightKind::Mean);
    let mut acc: Option<[Matrix; 6]> = None;
    for k in 1..=t {
        let cur = smoother.smoothed(k);
        let prev = smoother.smoothed(k - 1);
        let y = &ys[k - 1];
        let sigma = &cur.cov + &cur.mean * cur.mean.transpose();
        let xp = rule.place(&prev.mean, &cholesky_jittered(&prev.cov).map_err(|e| e.at_step(k - 1))?)?;
        let phi = outer_expect(&xp, w, |x| lin.basis_f(x, k - 1), |x| lin.basis_f(x, k - 1));
        let xc = rule.place(&cur.mean, &cholesky_jittered(&cur.cov).map_err(|e| e.at_step(k))?)?;
        let theta = outer_expect(&xc, w, |x| lin.basis_h(x), |x| lin.basis_h(x));
        let eh = outer_expect(&xc, w, |_| Vector::from_element(1, 1.0), |x| lin.basis_h(x));
        let b = y * eh;
        let joint = pairwise_joint(smoother, k)?;
        let xj = joint.state.sigma_points(rule2n).map_err(|e| e.at_step(k))?;
        let c = outer_expect(&xj, w2, |x| x.rows(0, n).into_owned(), |x| lin.basis_f(&x.rows(n, n).into_owned(), k - 1));
        let d = y * y.transpose();
        match acc.as_mut() {
            None => acc = Some([sigma, phi, theta, b, c, d]),
            Some(a) => {
                for (dst, src) in a.iter_mut().zip([sigma, phi, theta, b, c, d]) {
                    *dst += src;
                }
            }
        }
    }
    let [sigma, phi, theta, b, c, d] = acc.expect("t ≥ 1").map(|m| m / t as f64);
    let first = smoother.smoothed(0);
    Ok(EMStatistics {
        sigma: symmetrize(&sigma),
        phi: symmetrize(&phi),
        theta: symmetrize(&theta),
        b,
        c,
        d: symmetrize(&d),
        m0: first.mean.clone(),
        p0: first.cov.clone(),
        horizon: t,
    })
}

fn invert_statistic(m: &Matrix, name: &'static str) -> Result<Matrix> {
    match nalgebra::Cholesky::new(m.clone()) {
        Some(ch) => {
            let l = ch.l_dirty();
            let diag = (0..l.nrows()).map(|i| l[(i, i)]);
            let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if lo <= hi * 1e-8 {
                return Err(Error::SingularStatistic(name));
            }
            Ok(ch.inverse())
        }
        None => Err(Error::SingularStatistic(name)),
    }
}

fn apply_cov(free: &CovFree, full: &Matrix, current: &Matrix) -> Result<Matrix> {
    Ok(match free {
        CovFree::Fixed => current.clone(),
        CovFree::Full => symmetrize(full),
        CovFree::Scale => {
            let ch = spd_factor(current, "scaled covariance")?;
            let s = ch.solve(full).trace() / current.nrows() as f64;
            current * s
        }
        CovFree::Diagonal(idx) => {
            let mut out = current.clone();
            for &i in idx {
                out[(i, i)] = full[(i, i)];
            }
            out
        }
    })
}

/// Maximize `Q` over the free blocks in closed form, solving `(A, Q)`,
/// `(H, R)` and `(m₀, P₀)` jointly in that order.
pub fn m_step_closed_form(stats: &EMStatistics, free: &FreeBlocks, current: &LinearParams) -> Result<LinearParams> {
    let mut p = current.clone();
    if free.a {
        p.a = &stats.c * invert_statistic(&stats.phi, "Φ")?;
    }
    if free.q != CovFree::Fixed {
        let cat = &stats.c * p.a.transpose();
        let full = &stats.sigma - &cat - cat.transpose() + &p.a * &stats.phi * p.a.transpose();
        p.q = symmetrize(&apply_cov(&free.q, &full, &current.q)?);
    }
    if free.h {
        p.h = &stats.b * invert_statistic(&stats.theta, "Θ")?;
    }
    if free.r != CovFree::Fixed {
        let hbt = &p.h * stats.b.transpose();
        let full = &stats.d - &hbt - hbt.transpose() + &p.h * &stats.theta * p.h.transpose();
        p.r = symmetrize(&apply_cov(&free.r, &full, &current.r)?);
    }
    if free.m0 {
        p.m0 = stats.m0.clone();
    }
    if free.p0 {
        let diff = &stats.m0 - &p.m0;
        p.p0 = symmetrize(&(&stats.p0 + &diff * diff.transpose()));
    }
    Ok(p)
}

/// Parameter trajectory of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    /// `θ⁰ … θᴺ`.
    pub thetas: Vec<Vector>,
    /// `Q(θⁿ⁺¹, θⁿ)` for `n = 0 … N−1`.
    pub q_values: Vec<f64>,
    /// Filter log-likelihood at each `θⁿ`.
    pub log_likelihoods: Vec<f64>,
}

/// Run `iterations` EM steps from `theta0`.
///
/// Uses the closed-form M-step when the model's linear-in-parameters view
/// covers every free parameter, and maximizes `Q` numerically otherwise.
pub fn em_iterate<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta0: &Vector,
    ys: &[Vector],
    rule: &CubatureRule,
    rule2n: &CubatureRule,
    iterations: usize,
    cfg: &OptimizerConfig,
) -> Result<EmTrace> {
    let wrap = |stage: &'static str, iteration: usize| move |e: Error| Error::Iteration { stage, iteration, source: Box::new(e) };
    let lin = model.linear_form().filter(|l| l.closed_form_covers());
    let mut theta = theta0.clone();
    let mut trace = EmTrace { thetas: vec![theta.clone()], q_values: vec![], log_likelihoods: vec![] };
    for it in 0..iterations {
        let f = filter_pass(model, &theta, ys, rule).map_err(wrap("E-step", it))?;
        trace.log_likelihoods.push(f.log_likelihood);
        let s = rts_pass(&f, model, &theta, rule).map_err(wrap("E-step", it))?;
        let qf = QFunction::new(&s, ys, rule, rule2n).map_err(wrap("E-step", it))?;
        let next = match lin {
            Some(lin) => {
                let stats = em_statistics(&s, ys, lin, rule, rule2n).map_err(wrap("E-step", it))?;
                let p = m_step_closed_form(&stats, &lin.free(), &lin.params(&theta)).map_err(wrap("M-step", it))?;
                lin.to_theta(&p, &theta)
            }
            None => {
                let obj = |th: &Vector| qf.value_and_grad(model, th).map(|(v, g)| (-v, -g));
                let transforms = cfg.transforms_for(model);
                minimize(Objective::new(obj, transforms), &theta, cfg, || 0).map_err(wrap("M-step", it))?.theta
            }
        };
        trace.q_values.push(qf.value(model, &next).map_err(wrap("M-step", it))?);
        theta = next;
        trace.thetas.push(theta.clone());
    }
    let f = filter_pass(model, &theta, ys, rule).map_err(wrap("E-step", iterations))?;
    trace.log_likelihoods.push(f.log_likelihood);
    Ok(trace)
}
