//! Parameter estimation: direct likelihood maximization with sensitivity,
//! Fisher-identity or finite-difference gradients, and EM.

mod em;
mod optim;
mod sensitivity;

use std::str::FromStr;

pub use em::{em_iterate, em_statistics, loglik_gradient_fisher, m_step_closed_form, q_function, EMStatistics, EmTrace, QFunction};
pub use optim::{minimize, Objective, OptimResult, OptimizerConfig, Termination, TraceRow, Transform};
pub use sensitivity::{loglik_and_gradient_sensitivity, loglik_gradient_sensitivity, SensitivityState};

use crate::cubature::{cached_rule, CubatureRule};
use crate::error::{Error, Result};
use crate::gauss::{filter_pass, rts_pass};
use crate::linalg::Vector;
use crate::models::{Counted, StateSpaceModel};

/// Filter log-likelihood `ℒ(θ) = Σ ℓ_k`.
pub fn log_likelihood<M: StateSpaceModel + ?Sized>(model: &M, theta: &Vector, ys: &[Vector], rule: &CubatureRule) -> Result<f64> {
    filter_pass(model, theta, ys, rule).map(|f| f.log_likelihood)
}

/// Log-prior with an optional gradient.
pub struct LogPrior<'a> {
    pub value: &'a (dyn Fn(&Vector) -> f64 + Sync),
    pub gradient: Option<&'a (dyn Fn(&Vector) -> Vector + Sync)>,
}

/// Unnormalized log-posterior `ℒ(θ) + log p(θ)`.
pub fn objective_with_prior<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &Vector,
    ys: &[Vector],
    rule: &CubatureRule,
    log_prior: &dyn Fn(&Vector) -> f64,
) -> Result<f64> {
    let lp = log_prior(theta);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(log_likelihood(model, theta, ys, rule)? + lp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Sensitivity,
    Fisher,
    FiniteDifference,
}

impl FromStr for GradientMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sensitivity" => Ok(GradientMode::Sensitivity),
            "fisher" => Ok(GradientMode::Fisher),
            "finite-difference" | "fd" => Ok(GradientMode::FiniteDifference),
            _ => Err(Error::InvalidArgument(format!("unknown gradient mode '{s}'"))),
        }
    }
}

/// Central differences of `f` with step `1e-5·(1 + |θᵢ|)`.
pub fn finite_difference_gradient(mut f: impl FnMut(&Vector) -> Result<f64>, theta: &Vector) -> Result<Vector> {
    let mut g = Vector::zeros(theta.len());
    for i in 0..theta.len() {
        let h = 1e-5 * (1.0 + theta[i].abs());
        let mut tp = theta.clone();
        tp[i] += h;
        let mut tm = theta.clone();
        tm[i] -= h;
        g[i] = (f(&tp)? - f(&tm)?) / (2.0 * h);
    }
    Ok(g)
}

/// Log-likelihood and gradient at `θ` by the chosen method.
pub fn loglik_and_gradient<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &Vector,
    ys: &[Vector],
    rule: &CubatureRule,
    mode: GradientMode,
) -> Result<(f64, Vector)> {
    match mode {
        GradientMode::Sensitivity => loglik_and_gradient_sensitivity(model, theta, ys, rule),
        GradientMode::Fisher => {
            let rule2n = cached_rule(&rule.scheme, 2 * rule.dim)?;
            let f = filter_pass(model, theta, ys, rule)?;
            let s = rts_pass(&f, model, theta, rule)?;
            let (_, g) = QFunction::new(&s, ys, rule, &rule2n)?.value_and_grad(model, theta)?;
            Ok((f.log_likelihood, g))
        }
        GradientMode::FiniteDifference => {
            let v = log_likelihood(model, theta, ys, rule)?;
            let g = finite_difference_gradient(|t| log_likelihood(model, t, ys, rule), theta)?;
            Ok((v, g))
        }
    }
}

/// Maximum-likelihood estimate by BFGS on `−ℒ`.
///
/// Trace objectives are log-likelihood values; evaluation counts are
/// cumulative calls of `f`, `h` and their Jacobians.
pub fn maximize_likelihood<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta0: &Vector,
    ys: &[Vector],
    rule: &CubatureRule,
    cfg: &OptimizerConfig,
    mode: GradientMode,
) -> Result<OptimResult> {
    maximize_posterior(model, theta0, ys, rule, cfg, mode, None)
}

/// Maximum a posteriori estimate. A prior of `−∞` rejects the trial point.
pub fn maximize_posterior<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta0: &Vector,
    ys: &[Vector],
    rule: &CubatureRule,
    cfg: &OptimizerConfig,
    mode: GradientMode,
    prior: Option<&LogPrior<'_>>,
) -> Result<OptimResult> {
    let counted = Counted::new(model);
    let obj = |th: &Vector| -> Result<(f64, Vector)> {
        let mut lp = 0.0;
        let mut lpg = Vector::zeros(th.len());
        if let Some(p) = prior {
            lp = (p.value)(th);
            if lp == f64::NEG_INFINITY {
                return Ok((f64::INFINITY, Vector::zeros(th.len())));
            }
            lpg = match p.gradient {
                Some(g) => g(th),
                None => finite_difference_gradient(|t| Ok((p.value)(t)), th)?,
            };
        }
        let (v, g) = loglik_and_gradient(&counted, th, ys, rule, mode)?;
        Ok((-(v + lp), -(g + lpg)))
    };
    let transforms = cfg.transforms_for(model);
    let mut r = minimize(Objective::new(obj, transforms), theta0, cfg, || counted.evaluations())?;
    r.objective = -r.objective;
    r.gradient = -r.gradient;
    for row in &mut r.trace {
        row.objective = -row.objective;
    }
    Ok(r)
}
