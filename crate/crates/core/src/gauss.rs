//! Sigma-point Gaussian filtering, Rauch–Tung–Striebel smoothing and
//! pairwise-joint smoothing expectations.
//!
//! Time indexing: the prior `N(m₀, P₀)` describes `x₀`, measurements are
//! `y₁ … y_T`, and the transition producing `x_k` is evaluated at source
//! index `k − 1`.

use crate::cubature::{CubatureRule, WeightKind};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, log_det, spd_factor, symmetrize, Matrix, Vector};
use crate::models::StateSpaceModel;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A Gaussian belief `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussState {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussState {
    pub fn new(mean: Vector, cov: Matrix) -> Self {
        GaussState { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sigma-points `m + Lξᵢ` as columns, `L` the (jittered) lower Cholesky factor.
    pub fn sigma_points(&self, rule: &CubatureRule) -> Result<Matrix> {
        rule.place(&self.mean, &cholesky_jittered(&self.cov)?)
    }
}

/// One predict/update cycle of the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub predicted: GaussState,
    pub posterior: GaussState,
    /// Predicted measurement `μ_k`.
    pub mu: Vector,
    /// Innovation covariance `S_k`.
    pub s: Matrix,
    /// State/measurement cross-covariance `C_k`.
    pub c: Matrix,
    /// Gain `K_k = C_k S_k⁻¹`.
    pub gain: Matrix,
    /// Innovation `v_k = y_k − μ_k` after residual post-processing.
    pub innovation: Vector,
    /// `ℓ_k = −½ log|2πS_k| − ½ v_kᵀ S_k⁻¹ v_k`.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    /// Belief about `x₀`.
    pub initial: GaussState,
    /// `steps[k − 1]` holds time `k`.
    pub steps: Vec<FilterStep>,
    pub log_likelihood: f64,
}

impl FilterResult {
    /// Filtered belief at time `k ∈ 0..=T`.
    pub fn filtered(&self, k: usize) -> &GaussState {
        if k == 0 {
            &self.initial
        } else {
            &self.steps[k - 1].posterior
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherStep {
    /// `(m_{k|T}, P_{k|T})`.
    pub smoothed: GaussState,
    /// `G_k`; absent at `k = T`.
    pub gain: Option<Matrix>,
    /// `(m_{k+1|k}, P_{k+1|k})`; absent at `k = T`.
    pub predicted_next: Option<GaussState>,
    /// `D_{k+1}`, covariance of `x_k` with `f(x_k)` under the filtered belief.
    pub cross: Option<Matrix>,
}

/// Smoothed beliefs for `k = 0 … T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherResult {
    pub steps: Vec<SmootherStep>,
}

impl SmootherResult {
    /// Number of measurements `T`.
    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn smoothed(&self, k: usize) -> &GaussState {
        &self.steps[k].smoothed
    }
}

/// Joint smoothing belief of `(x_k, x_{k−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseJoint {
    pub k: usize,
    pub state: GaussState,
}

impl PairwiseJoint {
    /// Marginal of `x_k` (`block = 0`) or `x_{k−1}` (`block = 1`).
    pub fn marginal(&self, block: usize) -> GaussState {
        let n = self.state.dim() / 2;
        let o = block * n;
        GaussState::new(self.state.mean.rows(o, n).into_owned(), self.state.cov.view((o, o), (n, n)).into_owned())
    }
}

fn weighted_mean(x: &Matrix, w: &[f64]) -> Vector {
    let mut m = Vector::zeros(x.nrows());
    for (i, &wi) in w.iter().enumerate() {
        m.axpy(wi, &x.column(i), 1.0);
    }
    m
}

/// `Σ wᵢ (aᵢ − ā)(bᵢ − b̄)ᵀ`.
fn weighted_cross(a: &Matrix, am: &Vector, b: &Matrix, bm: &Vector, w: &[f64]) -> Matrix {
    let mut da = a.clone();
    for (i, mut c) in da.column_iter_mut().enumerate() {
        c -= am;
        c *= w[i];
    }
    let mut db = b.clone();
    for mut c in db.column_iter_mut() {
        c -= bm;
    }
    da * db.transpose()
}

fn map_columns(x: &Matrix, mut g: impl FnMut(&Vector) -> Vector) -> Result<Matrix> {
    let mut cols = Vec::with_capacity(x.ncols());
    for c in x.column_iter() {
        cols.push(g(&c.into_owned()));
    }
    let d = cols.first().map_or(0, |v| v.len());
    if cols.iter().any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch("integrand output length varies".into()));
    }
    Ok(Matrix::from_columns(&cols))
}

fn check_rule(rule: &CubatureRule, n: usize) -> Result<()> {
    if rule.dim != n {
        return Err(Error::DimensionMismatch(format!("rule of dimension {} used on state of dimension {n}", rule.dim)));
    }
    Ok(())
}

/// Prediction together with `D = Σ wᵢ (xᵢ − m)(f(xᵢ) − m′)ᵀ`.
pub fn predict_with_cross(
    state: &GaussState,
    f: impl FnMut(&Vector) -> Vector,
    q: &Matrix,
    rule: &CubatureRule,
) -> Result<(GaussState, Matrix)> {
    check_rule(rule, state.dim())?;
    let x = state.sigma_points(rule)?;
    let fx = map_columns(&x, f)?;
    if fx.nrows() != q.nrows() {
        return Err(Error::DimensionMismatch(format!("dynamics output {} vs Q {}", fx.nrows(), q.nrows())));
    }
    let m = weighted_mean(&fx, &rule.mean_weights);
    let wc = rule.weights(WeightKind::Covariance);
    let p = symmetrize(&(weighted_cross(&fx, &m, &fx, &m, wc) + q));
    let d = weighted_cross(&x, &state.mean, &fx, &m, wc);
    Ok((GaussState::new(m, p), d))
}

/// `m′ = Σ wᵢ f(xᵢ)`, `P′ = Σ wᵢ (f(xᵢ) − m′)(·)ᵀ + Q`.
pub fn predict(state: &GaussState, f: impl FnMut(&Vector) -> Vector, q: &Matrix, rule: &CubatureRule) -> Result<GaussState> {
    predict_with_cross(state, f, q, rule).map(|(s, _)| s)
}

/// Measurement update. `residual` post-processes the raw innovation `y − μ`.
pub fn update(
    pred: &GaussState,
    y: &Vector,
    h: impl FnMut(&Vector) -> Vector,
    r: &Matrix,
    rule: &CubatureRule,
    residual: Option<&dyn Fn(Vector) -> Vector>,
) -> Result<FilterStep> {
    check_rule(rule, pred.dim())?;
    let x = pred.sigma_points(rule)?;
    let hx = map_columns(&x, h)?;
    if hx.nrows() != y.len() || r.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "measurement {} vs model output {} and R {}",
            y.len(),
            hx.nrows(),
            r.nrows()
        )));
    }
    let mu = weighted_mean(&hx, &rule.mean_weights);
    let wc = rule.weights(WeightKind::Covariance);
    let s = symmetrize(&(weighted_cross(&hx, &mu, &hx, &mu, wc) + r));
    let c = weighted_cross(&x, &pred.mean, &hx, &mu, wc);
    let sch = spd_factor(&s, "innovation covariance")?;
    let gain = sch.solve(&c.transpose()).transpose();
    let raw = y - &mu;
    let v = match residual {
        Some(g) => g(raw),
        None => raw,
    };
    let mean = &pred.mean + &gain * &v;
    let cov = symmetrize(&(&pred.cov - &gain * &s * gain.transpose()));
    let sv = sch.solve(&v);
    let ll = -0.5 * (y.len() as f64 * LN_2PI + log_det(&sch)) - 0.5 * v.dot(&sv);
    Ok(FilterStep {
        predicted: pred.clone(),
        posterior: GaussState::new(mean, cov),
        mu,
        s,
        c,
        gain,
        innovation: v,
        log_likelihood: ll,
    })
}

/// Run the sigma-point filter over `ys` (measurements `y₁ … y_T`).
pub fn filter_pass<M: StateSpaceModel + ?Sized>(model: &M, theta: &Vector, ys: &[Vector], rule: &CubatureRule) -> Result<FilterResult> {
    let n = model.state_dim();
    check_rule(rule, n)?;
    if let Some((k, y)) = ys.iter().enumerate().find(|(_, y)| y.len() != model.meas_dim()) {
        return Err(Error::DimensionMismatch(format!(
            "measurement {} has length {}, model expects {}",
            k + 1,
            y.len(),
            model.meas_dim()
        )));
    }
    let initial = GaussState::new(model.initial_mean(theta), symmetrize(&model.initial_cov(theta)));
    let q = model.process_cov(theta);
    let r = model.measurement_cov(theta);
    let residual = |v: Vector| model.residual(v);
    let mut steps = Vec::with_capacity(ys.len());
    let mut total = 0.0;
    let mut cur = initial.clone();
    for (i, y) in ys.iter().enumerate() {
        let k = i + 1;
        let pred = predict(&cur, |x| model.transition(x, k - 1, theta), &q, rule).map_err(|e| e.at_step(k))?;
        let step = update(&pred, y, |x| model.measurement(x, theta), &r, rule, Some(&residual)).map_err(|e| e.at_step(k))?;
        total += step.log_likelihood;
        cur = step.posterior.clone();
        steps.push(step);
    }
    Ok(FilterResult { initial, steps, log_likelihood: total })
}

/// Backward RTS pass producing smoothed beliefs for `k = 0 … T`.
pub fn rts_pass<M: StateSpaceModel + ?Sized>(
    filter: &FilterResult,
    model: &M,
    theta: &Vector,
    rule: &CubatureRule,
) -> Result<SmootherResult> {
    let t = filter.len();
    let q = model.process_cov(theta);
    let mut out: Vec<SmootherStep> = Vec::with_capacity(t + 1);
    out.push(SmootherStep { smoothed: filter.filtered(t).clone(), gain: None, predicted_next: None, cross: None });
    for k in (0..t).rev() {
        let filt = filter.filtered(k);
        let (_, d) = predict_with_cross(filt, |x| model.transition(x, k, theta), &q, rule).map_err(|e| e.at_step(k))?;
        let pred = filter.steps[k].predicted.clone();
        let pch = spd_factor(&pred.cov, "predicted covariance").map_err(|e| e.at_step(k + 1))?;
        let g = pch.solve(&d.transpose()).transpose();
        let next = &out.last().expect("terminal step pushed").smoothed;
        let mean = &filt.mean + &g * (&next.mean - &pred.mean);
        let cov = symmetrize(&(&filt.cov + &g * (&next.cov - &pred.cov) * g.transpose()));
        out.push(SmootherStep {
            smoothed: GaussState::new(mean, cov),
            gain: Some(g),
            predicted_next: Some(pred),
            cross: Some(d),
        });
    }
    out.reverse();
    Ok(SmootherResult { steps: out })
}

/// Joint belief of `(x_k, x_{k−1})` for `1 ≤ k ≤ T`.
pub fn pairwise_joint(smoother: &SmootherResult, k: usize) -> Result<PairwiseJoint> {
    let t = smoother.horizon();
    if k == 0 || k > t {
        return Err(Error::IndexOutOfRange { index: k, len: t });
    }
    let cur = smoother.smoothed(k);
    let prev = smoother.smoothed(k - 1);
    let g = smoother.steps[k - 1].gain.as_ref().expect("gain exists before T");
    let n = cur.dim();
    let mut mean = Vector::zeros(2 * n);
    mean.rows_mut(0, n).copy_from(&cur.mean);
    mean.rows_mut(n, n).copy_from(&prev.mean);
    let lower = g * &cur.cov;
    let mut cov = Matrix::zeros(2 * n, 2 * n);
    cov.view_mut((0, 0), (n, n)).copy_from(&cur.cov);
    cov.view_mut((n, n), (n, n)).copy_from(&prev.cov);
    cov.view_mut((n, 0), (n, n)).copy_from(&lower);
    cov.view_mut((0, n), (n, n)).copy_from(&lower.transpose());
    Ok(PairwiseJoint { k, state: GaussState::new(mean, cov) })
}

/// `Σ wᵢ g(m + √P ξᵢ)` over the `2n`-dimensional joint.
pub fn expect_pairwise(joint: &PairwiseJoint, rule2n: &CubatureRule, g: impl FnMut(&Vector) -> Vector) -> Result<Vector> {
    check_rule(rule2n, joint.state.dim())?;
    let x = joint.state.sigma_points(rule2n)?;
    let gx = map_columns(&x, g)?;
    Ok(weighted_mean(&gx, &rule2n.mean_weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubature::{build_rule, Scheme};
    use crate::models::{simulate, LinearGaussian, Ungm};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn linear_model() -> LinearGaussian {
        LinearGaussian::new(
            Matrix::from_row_slice(2, 2, &[0.95, 0.1, -0.05, 0.9]),
            Matrix::from_row_slice(1, 2, &[1.0, 0.3]),
            Matrix::from_row_slice(2, 2, &[0.2, 0.02, 0.02, 0.1]),
            Matrix::from_element(1, 1, 0.3),
            Vector::from_vec(vec![0.5, -0.2]),
            Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
            vec![],
        )
    }

    /// Textbook Kalman filter. Returns filtered means/covs, predictions and log-likelihood.
    fn kalman(m: &LinearGaussian, ys: &[Vector]) -> (Vec<(Vector, Matrix)>, Vec<(Vector, Matrix)>, f64) {
        let mut mean = m.m0.clone();
        let mut cov = m.p0.clone();
        let mut filt = vec![(mean.clone(), cov.clone())];
        let mut preds = vec![];
        let mut ll = 0.0;
        for y in ys {
            let mp = &m.a * &mean;
            let pp = &m.a * &cov * m.a.transpose() + &m.q;
            let s = &m.h * &pp * m.h.transpose() + &m.r;
            let sinv = s.clone().try_inverse().unwrap();
            let k = &pp * m.h.transpose() * &sinv;
            let v = y - &m.h * &mp;
            ll += -0.5 * (s.determinant() * 2.0 * std::f64::consts::PI).ln() - 0.5 * (v.transpose() * &sinv * &v)[0];
            mean = &mp + &k * &v;
            cov = &pp - &k * &s * k.transpose();
            preds.push((mp, pp));
            filt.push((mean.clone(), cov.clone()));
        }
        (filt, preds, ll)
    }

    fn rts(m: &LinearGaussian, filt: &[(Vector, Matrix)], preds: &[(Vector, Matrix)]) -> (Vec<(Vector, Matrix)>, Vec<Matrix>) {
        let t = preds.len();
        let mut out = vec![filt[t].clone()];
        let mut gains = vec![];
        for k in (0..t).rev() {
            let (mf, pf) = &filt[k];
            let (mp, pp) = &preds[k];
            let g = pf * m.a.transpose() * pp.clone().try_inverse().unwrap();
            let (ms, ps) = out.last().unwrap();
            out.push((mf + &g * (ms - mp), pf + &g * (ps - pp) * g.transpose()));
            gains.push(g);
        }
        out.reverse();
        gains.reverse();
        (out, gains)
    }

    fn data(m: &LinearGaussian, t: usize) -> Vec<Vector> {
        simulate(m, &m.theta(), t, 11, 0).measurements
    }

    fn rules() -> Vec<CubatureRule> {
        ["sym3", "sym5", "sym7", "sym9", "gh(2)", "gh(4)", "ut(0.5,2,1)"]
            .iter()
            .map(|s| build_rule(&s.parse().unwrap(), 2).unwrap())
            .collect()
    }

    #[test]
    fn identity_predict_is_noop() {
        let rule = build_rule(&Scheme::SYM5, 2).unwrap();
        let s = GaussState::new(Vector::from_vec(vec![1.0, 2.0]), Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let p = predict(&s, |x| x.clone(), &Matrix::zeros(2, 2), &rule).unwrap();
        assert!((p.mean - &s.mean).amax() < 1e-12);
        assert!((p.cov - &s.cov).amax() < 1e-12);
    }

    #[test]
    fn uninformative_measurement_keeps_prior() {
        let rule = build_rule(&Scheme::SYM3, 2).unwrap();
        let s = GaussState::new(Vector::from_vec(vec![1.0, 2.0]), Matrix::identity(2, 2));
        let r = Matrix::identity(2, 2) * 1e12;
        let st = update(&s, &Vector::from_vec(vec![5.0, -3.0]), |x| x.clone(), &r, &rule, None).unwrap();
        assert!((st.posterior.mean - &s.mean).amax() < 1e-6);
        assert!((st.posterior.cov - &s.cov).amax() < 1e-6);
    }

    #[test]
    fn residual_wraps_full_turn() {
        let rule = build_rule(&Scheme::SYM3, 1).unwrap();
        let s = GaussState::new(Vector::from_element(1, 0.3), Matrix::from_element(1, 1, 0.1));
        let wrap = |v: Vector| v.map(crate::models::wrap_angle);
        let y = Vector::from_element(1, 0.3 + 2.0 * std::f64::consts::PI);
        let st = update(&s, &y, |x| x.clone(), &Matrix::from_element(1, 1, 0.01), &rule, Some(&wrap)).unwrap();
        assert!(st.innovation[0].abs() < 1e-12);
    }

    #[test]
    fn matches_kalman_and_rts_for_all_rules() {
        let m = linear_model();
        let ys = data(&m, 40);
        let (kf, kp, kll) = kalman(&m, &ys);
        let (ks, kg) = rts(&m, &kf, &kp);
        for rule in rules() {
            let f = filter_pass(&m, &m.theta(), &ys, &rule).unwrap();
            assert!((f.log_likelihood - kll).abs() < 1e-8, "{}", rule.scheme);
            for k in 0..=40 {
                assert!((&f.filtered(k).mean - &kf[k].0).amax() < 1e-8);
                assert!((&f.filtered(k).cov - &kf[k].1).amax() < 1e-8);
            }
            let s = rts_pass(&f, &m, &m.theta(), &rule).unwrap();
            assert_eq!(s.steps.len(), 41);
            assert_eq!(s.smoothed(40), f.filtered(40));
            for k in 0..=40 {
                assert!((&s.smoothed(k).mean - &ks[k].0).amax() < 1e-8);
                assert!((&s.smoothed(k).cov - &ks[k].1).amax() < 1e-8);
                // Smoothing never increases variance.
                let diff = &f.filtered(k).cov - &s.smoothed(k).cov;
                assert!(diff.symmetric_eigenvalues().min() > -1e-10);
            }
            // Lag-one covariance Cov(x_k, x_{k-1}) = P_{k|T} G_{k-1}ᵀ.
            for k in [1, 17, 40] {
                let j = pairwise_joint(&s, k).unwrap();
                let exact = &ks[k].1 * kg[k - 1].transpose();
                assert!((j.state.cov.view((0, 2), (2, 2)) - &exact).amax() < 1e-8);
                assert_eq!(j.state.cov.view((0, 2), (2, 2)), j.state.cov.view((2, 0), (2, 2)).transpose());
                assert_eq!(j.marginal(0), *s.smoothed(k));
                assert_eq!(j.marginal(1), *s.smoothed(k - 1));
            }
        }
    }

    #[test]
    fn empty_and_single_step() {
        let m = linear_model();
        let rule = build_rule(&Scheme::SYM3, 2).unwrap();
        let f = filter_pass(&m, &m.theta(), &[], &rule).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.log_likelihood, 0.0);
        let s = rts_pass(&f, &m, &m.theta(), &rule).unwrap();
        assert_eq!(s.horizon(), 0);
        let ys = data(&m, 1);
        let f = filter_pass(&m, &m.theta(), &ys, &rule).unwrap();
        let s = rts_pass(&f, &m, &m.theta(), &rule).unwrap();
        assert_eq!(s.smoothed(1), f.filtered(1));
        assert!(matches!(pairwise_joint(&s, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(pairwise_joint(&s, 2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn pairwise_expectations() {
        let m = linear_model();
        let ys = data(&m, 10);
        let rule = build_rule(&Scheme::SYM5, 2).unwrap();
        let rule4 = build_rule(&Scheme::SYM5, 4).unwrap();
        let f = filter_pass(&m, &m.theta(), &ys, &rule).unwrap();
        let s = rts_pass(&f, &m, &m.theta(), &rule).unwrap();
        let j = pairwise_joint(&s, 5).unwrap();
        let id = expect_pairwise(&j, &rule4, |x| x.clone()).unwrap();
        assert!((id - &j.state.mean).amax() < 1e-12);
        // E[a bᵀ] = Cov(a, b) + E[a] E[b]ᵀ.
        let ab = expect_pairwise(&j, &rule4, |x| {
            let a = x.rows(0, 2);
            let b = x.rows(2, 2);
            let o = a * b.transpose();
            Vector::from_column_slice(o.as_slice())
        })
        .unwrap();
        let exact = j.state.cov.view((0, 2), (2, 2)) + s.smoothed(5).mean.clone() * s.smoothed(4).mean.transpose();
        assert!((Matrix::from_column_slice(2, 2, ab.as_slice()) - exact).amax() < 1e-8);
        let sq = expect_pairwise(&j, &rule4, |x| x.rows(0, 2).map(|v| v * v)).unwrap();
        let single = crate::cubature::expect(&rule, &s.smoothed(5).mean, &cholesky_jittered(&s.smoothed(5).cov).unwrap(), |x| x.map(|v| v * v)).unwrap();
        assert!((sq - single).amax() < 1e-10);
        assert!(expect_pairwise(&j, &rule, |x| x.clone()).is_err());
    }

    #[test]
    fn ungm_prediction_matches_monte_carlo() {
        let model = Ungm::default();
        let th = model.theta();
        let rule = build_rule(&Scheme::SYM3, 1).unwrap();
        let s = GaussState::new(Vector::from_element(1, 0.0), Matrix::from_element(1, 1, 1.0));
        let p = predict(&s, |x| model.transition(x, 0, &th), &Matrix::zeros(1, 1), &rule).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let f = model.transition(&Vector::from_element(1, x), 0, &th)[0];
            sum += f;
            sq += f * f;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        // sym3 in 1-D is exact for the odd part; only the constant 8 survives.
        assert!((p.mean[0] - mean).abs() < 3.0 * se, "{} vs {mean} ± {se}", p.mean[0]);
    }

    #[test]
    fn filter_is_deterministic() {
        let model = Ungm::default();
        let ys = simulate(&model, &model.theta(), 50, 1, 0).measurements;
        let rule = build_rule(&Scheme::SYM7, 1).unwrap();
        let a = filter_pass(&model, &model.theta(), &ys, &rule).unwrap();
        let b = filter_pass(&model, &model.theta(), &ys, &rule).unwrap();
        assert_eq!(a, b);
    }
}
