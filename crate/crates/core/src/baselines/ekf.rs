use crate::error::{Error, Result};
use crate::estimate::{finite_difference_gradient, minimize, Objective, OptimResult, OptimizerConfig};
use crate::gauss::{FilterResult, FilterStep, GaussState, SmootherResult, SmootherStep};
use crate::linalg::{log_det, spd_factor, symmetrize, Vector};
use crate::models::{Counted, StateSpaceModel};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Extended Kalman filter: first-order linearization of `f` and `h` at the
/// current mean.
pub fn ekf_filter_pass<M: StateSpaceModel + ?Sized>(model: &M, theta: &Vector, ys: &[Vector]) -> Result<FilterResult> {
    let d = model.meas_dim();
    if let Some((k, y)) = ys.iter().enumerate().find(|(_, y)| y.len() != d) {
        return Err(Error::DimensionMismatch(format!("measurement {} has length {}, model expects {d}", k + 1, y.len())));
    }
    let initial = GaussState::new(model.initial_mean(theta), symmetrize(&model.initial_cov(theta)));
    let q = model.process_cov(theta);
    let r = model.measurement_cov(theta);
    let mut cur = initial.clone();
    let mut steps = Vec::with_capacity(ys.len());
    let mut total = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let k = i + 1;
        let f = model.transition_jacobian(&cur.mean, k - 1, theta);
        let pred = GaussState::new(
            model.transition(&cur.mean, k - 1, theta),
            symmetrize(&(&f * &cur.cov * f.transpose() + &q)),
        );
        let h = model.measurement_jacobian(&pred.mean, theta);
        let mu = model.measurement(&pred.mean, theta);
        let s = symmetrize(&(&h * &pred.cov * h.transpose() + &r));
        let c = &pred.cov * h.transpose();
        let sch = spd_factor(&s, "innovation covariance").map_err(|e| e.at_step(k))?;
        let gain = sch.solve(&c.transpose()).transpose();
        let v = model.residual(y - &mu);
        let ll = -0.5 * (d as f64 * LN_2PI + log_det(&sch)) - 0.5 * v.dot(&sch.solve(&v));
        let posterior = GaussState::new(&pred.mean + &gain * &v, symmetrize(&(&pred.cov - &gain * &s * gain.transpose())));
        total += ll;
        cur = posterior.clone();
        steps.push(FilterStep { predicted: pred, posterior, mu, s, c, gain, innovation: v, log_likelihood: ll });
    }
    Ok(FilterResult { initial, steps, log_likelihood: total })
}

pub fn ekf_log_likelihood<M: StateSpaceModel + ?Sized>(model: &M, theta: &Vector, ys: &[Vector]) -> Result<f64> {
    ekf_filter_pass(model, theta, ys).map(|f| f.log_likelihood)
}

/// Maximum-likelihood estimate under the EKF likelihood, by BFGS with
/// central-difference gradients. Trace objectives are log-likelihood values.
pub fn ekf_maximize_likelihood<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta0: &Vector,
    ys: &[Vector],
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    let counted = Counted::new(model);
    let obj = |th: &Vector| -> Result<(f64, Vector)> {
        let v = ekf_log_likelihood(&counted, th, ys)?;
        let g = finite_difference_gradient(|t| ekf_log_likelihood(&counted, t, ys), th)?;
        Ok((-v, -g))
    };
    let mut r = minimize(Objective::new(obj, cfg.transforms_for(model)), theta0, cfg, || counted.evaluations())?;
    r.objective = -r.objective;
    r.gradient = -r.gradient;
    for row in &mut r.trace {
        row.objective = -row.objective;
    }
    Ok(r)
}

/// RTS smoother linearized at the filtered means.
pub fn ekf_rts_pass<M: StateSpaceModel + ?Sized>(filter: &FilterResult, model: &M, theta: &Vector) -> Result<SmootherResult> {
    let t = filter.len();
    let mut out: Vec<SmootherStep> = Vec::with_capacity(t + 1);
    out.push(SmootherStep { smoothed: filter.filtered(t).clone(), gain: None, predicted_next: None, cross: None });
    for k in (0..t).rev() {
        let filt = filter.filtered(k);
        let f = model.transition_jacobian(&filt.mean, k, theta);
        let d = &filt.cov * f.transpose();
        let pred = filter.steps[k].predicted.clone();
        let pch = spd_factor(&pred.cov, "predicted covariance").map_err(|e| e.at_step(k + 1))?;
        let g = pch.solve(&d.transpose()).transpose();
        let next = &out.last().expect("terminal step pushed").smoothed;
        let mean = &filt.mean + &g * (&next.mean - &pred.mean);
        let cov = symmetrize(&(&filt.cov + &g * (&next.cov - &pred.cov) * g.transpose()));
        out.push(SmootherStep { smoothed: GaussState::new(mean, cov), gain: Some(g), predicted_next: Some(pred), cross: Some(d) });
    }
    out.reverse();
    Ok(SmootherResult { steps: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubature::{build_rule, Scheme};
    use crate::gauss::{filter_pass, rts_pass};
    use crate::linalg::Matrix;
    use crate::models::{simulate, LinearGaussian, Ungm};

    fn linear() -> LinearGaussian {
        LinearGaussian::new(
            Matrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]),
            Matrix::from_row_slice(1, 2, &[1.0, -0.5]),
            Matrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]),
            Matrix::from_element(1, 1, 0.4),
            Vector::from_vec(vec![0.3, -0.1]),
            Matrix::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 0.6]),
            vec![],
        )
    }

    #[test]
    fn linear_model_matches_sigma_point_filter() {
        // Sigma-point filters are exact on linear models, so they serve as the Kalman reference here.
        let m = linear();
        let th = m.theta();
        let ys = simulate(&m, &th, 30, 4, 0).measurements;
        let rule = build_rule(&Scheme::SYM3, 2).unwrap();
        let e = ekf_filter_pass(&m, &th, &ys).unwrap();
        let s = filter_pass(&m, &th, &ys, &rule).unwrap();
        assert!((e.log_likelihood - s.log_likelihood).abs() < 1e-10);
        let es = ekf_rts_pass(&e, &m, &th).unwrap();
        let ss = rts_pass(&s, &m, &th, &rule).unwrap();
        for k in 0..=30 {
            assert!((&e.filtered(k).mean - &s.filtered(k).mean).amax() < 1e-10);
            assert!((&es.smoothed(k).cov - &ss.smoothed(k).cov).amax() < 1e-10);
            assert!((&es.smoothed(k).mean - &ss.smoothed(k).mean).amax() < 1e-10);
        }
        assert_eq!(es.smoothed(30), e.filtered(30));
    }

    #[test]
    fn ungm_differs_from_sigma_point_filter() {
        let m = Ungm::default();
        let th = m.theta();
        let ys = simulate(&m, &th, 50, 4, 0).measurements;
        let e = ekf_log_likelihood(&m, &th, &ys).unwrap();
        let s = filter_pass(&m, &th, &ys, &build_rule(&Scheme::SYM3, 1).unwrap()).unwrap().log_likelihood;
        assert!((e - s).abs() > 1e-3, "{e} vs {s}");
    }

    #[test]
    fn mle_matches_sigma_point_mle_on_linear_model() {
        use crate::estimate::{maximize_likelihood, GradientMode};
        use crate::models::LinearParam;
        let mut m = linear();
        m.free = vec![LinearParam::RScale];
        let ys = simulate(&m, &m.theta(), 200, 9, 0).measurements;
        let cfg = OptimizerConfig::default();
        let th0 = Vector::from_element(1, 2.0);
        let e = ekf_maximize_likelihood(&m, &th0, &ys, &cfg).unwrap();
        let s = maximize_likelihood(&m, &th0, &ys, &build_rule(&Scheme::SYM3, 2).unwrap(), &cfg, GradientMode::Sensitivity).unwrap();
        assert!((e.theta[0] - s.theta[0]).abs() < 1e-6, "{} vs {}", e.theta[0], s.theta[0]);
        assert!(e.trace.last().unwrap().evaluations > 0);
        assert_eq!(e.objective, e.trace.last().unwrap().objective);
    }
}
