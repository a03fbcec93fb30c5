//! BFGS with backtracking Armijo line search.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::models::StateSpaceModel;

/// Reparameterization applied before optimizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Optimize `u = ln θ`, keeping `θ > 0`.
    Log,
}

impl Transform {
    fn to_theta(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
        }
    }

    fn to_unconstrained(self, t: f64) -> f64 {
        match self {
            Transform::Identity => t,
            Transform::Log => t.ln(),
        }
    }

    /// `dθ/du` at `θ`.
    fn slope(self, t: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop when the largest gradient component (in transformed space) falls below this.
    pub gradient_tolerance: f64,
    pub armijo_c1: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Cap on the length of the first (steepest-descent) step.
    pub initial_step: f64,
    /// Optimize positive parameters in log space when no explicit transforms are given.
    pub log_space: bool,
    pub transforms: Option<Vec<Transform>>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            armijo_c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 50,
            initial_step: 1.0,
            log_space: true,
            transforms: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gradient_tolerance > 0.0
            && self.armijo_c1 > 0.0
            && self.armijo_c1 < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.initial_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer configuration {self:?}")))
        }
    }

    pub fn transforms_for<M: StateSpaceModel + ?Sized>(&self, model: &M) -> Vec<Transform> {
        match &self.transforms {
            Some(t) => t.clone(),
            None => (0..model.param_dim())
                .map(|i| if self.log_space && model.param_is_positive(i) { Transform::Log } else { Transform::Identity })
                .collect(),
        }
    }
}

/// A function to minimize in the original parameters, returning value and gradient.
pub struct Objective<F> {
    f: F,
    transforms: Vec<Transform>,
}

impl<F> Objective<F>
where
    F: FnMut(&Vector) -> Result<(f64, Vector)>,
{
    pub fn new(f: F, transforms: Vec<Transform>) -> Self {
        Objective { f, transforms }
    }

    fn theta(&self, u: &Vector) -> Vector {
        Vector::from_iterator(u.len(), u.iter().zip(&self.transforms).map(|(&v, t)| t.to_theta(v)))
    }

    /// Value and gradient in transformed coordinates. Failures and non-finite
    /// values come back as `None` so the line search can reject them.
    fn eval(&mut self, u: &Vector) -> Option<(f64, Vector, Vector)> {
        let th = self.theta(u);
        let (v, g) = (self.f)(&th).ok()?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let gu = Vector::from_iterator(g.len(), g.iter().zip(&self.transforms).zip(th.iter()).map(|((&gi, t), &ti)| gi * t.slope(ti)));
        Some((v, gu, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    /// No further decrease is resolvable in floating point.
    StepTolerance,
    MaxIterations,
}

/// One row of the optimizer trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub objective: f64,
    /// Euclidean norm of the gradient in the original parameters.
    pub gradient_norm: f64,
    /// Cumulative model-function evaluations.
    pub evaluations: u64,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub theta: Vector,
    pub objective: f64,
    /// Gradient in the original parameters.
    pub gradient: Vector,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
}

/// Minimize `obj` from `theta0`. `evaluations` reports a running evaluation
/// count for the trace.
pub fn minimize<F>(mut obj: Objective<F>, theta0: &Vector, cfg: &OptimizerConfig, evaluations: impl Fn() -> u64) -> Result<OptimResult>
where
    F: FnMut(&Vector) -> Result<(f64, Vector)>,
{
    cfg.validate()?;
    let m = theta0.len();
    if obj.transforms.len() != m {
        return Err(Error::DimensionMismatch(format!("{} transforms for {m} parameters", obj.transforms.len())));
    }
    if theta0.iter().zip(&obj.transforms).any(|(&t, tr)| *tr == Transform::Log && t <= 0.0) {
        return Err(Error::InvalidArgument("log-transformed parameter must start positive".into()));
    }
    let start = Instant::now();
    let mut u = Vector::from_iterator(m, theta0.iter().zip(&obj.transforms).map(|(&t, tr)| tr.to_unconstrained(t)));
    let (mut f, mut g, mut g_theta) = match obj.eval(&u) {
        Some(v) => v,
        None => {
            let (f, _) = (obj.f)(theta0)?;
            return Err(Error::InvalidArgument(format!("objective not finite at the starting point ({f})")));
        }
    };
    let mut trace = Vec::new();
    let mut record = |it: usize, u: &Vector, f: f64, gt: &Vector, obj: &Objective<F>| {
        trace.push(TraceRow {
            iteration: it,
            theta: obj.theta(u).iter().copied().collect(),
            objective: f,
            gradient_norm: gt.norm(),
            evaluations: evaluations(),
            wall_time: start.elapsed().as_secs_f64(),
        })
    };
    record(0, &u, f, &g_theta, &obj);

    let mut h = Matrix::identity(m, m);
    let mut fresh = true;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        if g.amax() < cfg.gradient_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if slope >= 0.0 || !slope.is_finite() {
            h = Matrix::identity(m, m);
            fresh = true;
            p = -g.clone();
            slope = g.dot(&p);
        }
        if fresh {
            let norm = p.norm();
            if norm > cfg.initial_step {
                p *= cfg.initial_step / norm;
                slope = g.dot(&p);
            }
        }

        let allowance = 4.0 * f64::EPSILON * f.abs();
        let mut alpha = 1.0;
        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..=cfg.max_backtracks {
            let trial = &u + &p * alpha;
            match obj.eval(&trial) {
                Some((ft, gt, gth)) if ft <= f + cfg.armijo_c1 * alpha * slope + allowance => {
                    accepted = Some((trial, ft, gt, gth));
                    break;
                }
                Some(_) => any_finite = true,
                None => {}
            }
            alpha *= cfg.shrink;
        }
        let Some((un, fn_, gn, gthn)) = accepted else {
            if !fresh {
                // Retry along steepest descent before giving up.
                h = Matrix::identity(m, m);
                fresh = true;
                continue;
            }
            if any_finite {
                termination = Termination::StepTolerance;
                break;
            }
            return Err(Error::LineSearchFailed { iterations, best: obj.theta(&u).iter().copied().collect(), objective: f });
        };
        iterations += 1;
        let s = &un - &u;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h = Matrix::identity(m, m) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let left = Matrix::identity(m, m) - &s * y.transpose() * rho;
            h = &left * &h * left.transpose() + &s * s.transpose() * rho;
            fresh = false;
        }
        let tiny_step = s.amax() <= 1e-14 * (1.0 + u.amax());
        let flat = (f - fn_).abs() <= allowance;
        u = un;
        f = fn_;
        g = gn;
        g_theta = gthn;
        record(iterations, &u, f, &g_theta, &obj);
        if tiny_step && flat {
            termination = Termination::StepTolerance;
            break;
        }
    }
    if termination == Termination::MaxIterations && g.amax() < cfg.gradient_tolerance {
        termination = Termination::GradientTolerance;
    }
    Ok(OptimResult { theta: obj.theta(&u), objective: f, gradient: g_theta, iterations, termination, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &Vector| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = Vector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            Ok((v, g))
        };
        let r = minimize(Objective::new(f, vec![Transform::Identity; 2]), &Vector::from_vec(vec![-1.2, 1.0]), &OptimizerConfig::default(), || 0)
            .unwrap();
        assert_eq!(r.termination, Termination::GradientTolerance);
        assert!((r.theta[0] - 1.0).abs() < 1e-6 && (r.theta[1] - 1.0).abs() < 1e-6, "{:?}", r.theta);
    }

    #[test]
    fn log_transform_stays_positive() {
        // Minimum of θ − 2 ln θ at θ = 2.
        let f = |x: &Vector| Ok((x[0] - 2.0 * x[0].ln(), Vector::from_element(1, 1.0 - 2.0 / x[0])));
        let r = minimize(Objective::new(f, vec![Transform::Log]), &Vector::from_element(1, 30.0), &OptimizerConfig::default(), || 0).unwrap();
        assert!((r.theta[0] - 2.0).abs() < 1e-6);
        assert!(r.trace.iter().all(|row| row.theta[0] > 0.0));
    }

    #[test]
    fn starts_at_optimum() {
        let f = |x: &Vector| Ok(((x[0] - 3.0).powi(2), Vector::from_element(1, 2.0 * (x[0] - 3.0))));
        let r = minimize(Objective::new(f, vec![Transform::Identity]), &Vector::from_element(1, 3.0), &OptimizerConfig::default(), || 0).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.theta[0], 3.0);
        assert_eq!(r.termination, Termination::GradientTolerance);
    }

    #[test]
    fn rejects_infeasible_region() {
        // Objective undefined for x > 1; the minimum of the extension would be at 5.
        let f = |x: &Vector| {
            if x[0] > 1.0 {
                Ok((f64::INFINITY, Vector::zeros(1)))
            } else {
                Ok(((x[0] - 5.0).powi(2), Vector::from_element(1, 2.0 * (x[0] - 5.0))))
            }
        };
        match minimize(Objective::new(f, vec![Transform::Identity]), &Vector::from_element(1, 0.0), &OptimizerConfig::default(), || 0) {
            Ok(r) => assert!(r.trace.iter().all(|row| row.theta[0] <= 1.0)),
            Err(Error::LineSearchFailed { best, .. }) => assert!(best[0] <= 1.0 && best[0] > 0.99),
            Err(e) => panic!("{e}"),
        }
    }
}
