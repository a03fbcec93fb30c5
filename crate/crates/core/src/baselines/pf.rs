use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, log_det, spd_factor, Matrix, Vector};
use crate::models::StateSpaceModel;
use crate::rng::{self, Role};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Trajectory key for particle-filter streams, kept apart from simulation keys.
const PF_STREAM: u64 = 0x9F1A_57E2_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposal {
    /// Propagate through the dynamics; weight by the measurement density.
    Bootstrap,
    /// Exact `p(x_k | x_{k−1}, y_k)`; requires `h(x) = Hx`.
    OptimalLinear,
}

impl std::str::FromStr for Proposal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(Proposal::Bootstrap),
            "optimal" | "optimal-linear-measurement" => Ok(Proposal::OptimalLinear),
            _ => Err(Error::InvalidArgument(format!("unknown proposal '{s}'"))),
        }
    }
}

/// Weighted particle approximation of the filtering distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    /// `n × N`, one particle per column.
    pub particles: Matrix,
    /// Normalized log-weights.
    pub log_weights: Vec<f64>,
    pub ess: f64,
    /// Running log-likelihood estimate.
    pub log_likelihood: f64,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn ess(log_w: &[f64]) -> f64 {
    1.0 / log_w.iter().map(|l| (2.0 * l).exp()).sum::<f64>()
}

/// Systematic resampling: returns the ancestor index of each offspring.
pub fn systematic_resample(log_w: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = log_w.len();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for j in 0..n {
        let u = u0 + j as f64 / n as f64;
        while i < n - 1 && cum + log_w[i].exp() < u {
            cum += log_w[i].exp();
            i += 1;
        }
        out.push(i);
    }
    out
}

/// `log N(v; 0, S)` from a factorization of `S`.
fn log_gauss(v: &Vector, sch: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    -0.5 * (v.len() as f64 * LN_2PI + log_det(sch)) - 0.5 * v.dot(&sch.solve(v))
}

/// Run a particle filter over `ys`, resampling when ESS < N/2.
pub fn pf_filter<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &Vector,
    ys: &[Vector],
    particles: usize,
    seed: u64,
    proposal: Proposal,
) -> Result<ParticleSet> {
    if particles == 0 {
        return Err(Error::InvalidArgument("particle count must be positive".into()));
    }
    let n = model.state_dim();
    let q = model.process_cov(theta);
    let r = model.measurement_cov(theta);
    let l0 = cholesky_jittered(&model.initial_cov(theta))?;
    let m0 = model.initial_mean(theta);

    // Proposal-specific constants.
    let (lprop, gain, hmat, weight_cov) = match proposal {
        Proposal::Bootstrap => (cholesky_jittered(&q)?, None, None, spd_factor(&r, "measurement covariance")?),
        Proposal::OptimalLinear => {
            let h = model
                .linear_measurement(theta)
                .ok_or_else(|| Error::InvalidArgument("optimal proposal needs a linear measurement model".into()))?;
            let s = &h * &q * h.transpose() + &r;
            let sch = spd_factor(&s, "predictive measurement covariance")?;
            let k = sch.solve(&(&h * &q)).transpose();
            let pcov = &q - &k * &h * &q;
            let pcov = (&pcov + pcov.transpose()) * 0.5;
            (cholesky_jittered(&pcov)?, Some(k), Some(h), sch)
        }
    };

    let mut init = rng::stream(seed, PF_STREAM, 0, Role::InitialState);
    let mut x = Matrix::from_fn(n, particles, |_, _| 0.0);
    for j in 0..particles {
        x.set_column(j, &rng::gaussian(&mut init, &m0, &l0));
    }
    let uniform = -(particles as f64).ln();
    let mut log_w = vec![uniform; particles];
    let mut total = 0.0;

    for (idx, y) in ys.iter().enumerate() {
        let k = idx + 1;
        if ess(&log_w) < particles as f64 / 2.0 {
            let anc = systematic_resample(&log_w, &mut rng::stream(seed, PF_STREAM, k as u64, Role::Resampling));
            x = Matrix::from_columns(&anc.iter().map(|&a| x.column(a)).collect::<Vec<_>>());
            log_w = vec![uniform; particles];
        }
        let mut prop = rng::stream(seed, PF_STREAM, k as u64, Role::Propagation);
        let mut incr = Vec::with_capacity(particles);
        for j in 0..particles {
            let f = model.transition(&x.column(j).into_owned(), k - 1, theta);
            let lw = match (&gain, &hmat) {
                (Some(kg), Some(h)) => {
                    let innov = y - h * &f;
                    let mean = &f + kg * &innov;
                    x.set_column(j, &rng::gaussian(&mut prop, &mean, &lprop));
                    log_gauss(&innov, &weight_cov)
                }
                _ => {
                    let xn = rng::gaussian(&mut prop, &f, &lprop);
                    let v = model.residual(y - model.measurement(&xn, theta));
                    x.set_column(j, &xn);
                    log_gauss(&v, &weight_cov)
                }
            };
            incr.push(lw);
        }
        let joint: Vec<f64> = log_w.iter().zip(&incr).map(|(a, b)| a + b).collect();
        let norm = log_sum_exp(&joint);
        if !norm.is_finite() {
            return Err(Error::WeightCollapse { step: k });
        }
        total += norm;
        log_w = joint.iter().map(|l| l - norm).collect();
    }
    Ok(ParticleSet { particles: x, ess: ess(&log_w), log_weights: log_w, log_likelihood: total })
}

/// Particle-filter estimate of the log-likelihood.
pub fn pf_loglik<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &Vector,
    ys: &[Vector],
    particles: usize,
    seed: u64,
    proposal: Proposal,
) -> Result<f64> {
    pf_filter(model, theta, ys, particles, seed, proposal).map(|p| p.log_likelihood)
}
