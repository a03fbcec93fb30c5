//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sigma_core::baselines::Proposal;
use sigma_core::estimate::{GradientMode, OptimizerConfig};
use sigma_core::models::{initial_uncertainty_sweep, CoordinatedTurn, CtParam, LinearGaussian, LinearParam, Ungm, UngmParam};
use sigma_core::{Matrix, StateSpaceModel, Vector};

/// Model name plus parameters. Omitted fields take the model defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Ungm {
        a: Option<f64>,
        b: Option<f64>,
        c: Option<f64>,
        d: Option<f64>,
        q: Option<f64>,
        r: Option<f64>,
        m0: Option<f64>,
        p0: Option<f64>,
        /// Any of `a`, `b`, `c`, `d`, `q`, `r`.
        #[serde(default)]
        free: Vec<String>,
    },
    Ct {
        qc: Option<f64>,
        qw: Option<f64>,
        dt: Option<f64>,
        sensors: Option<Vec<[f64; 2]>>,
        r_diag: Option<Vec<f64>>,
        m0: Option<Vec<f64>>,
        /// Diagonal of `P₀`.
        p0_diag: Option<Vec<f64>>,
        /// `sqrt_r<i>` or `r<i>` with 1-based sensor index.
        #[serde(default)]
        free: Vec<String>,
    },
    Linear {
        /// Row-major matrices.
        a: Vec<Vec<f64>>,
        h: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        m0: Vec<f64>,
        p0: Vec<Vec<f64>>,
        /// `q_scale`, `r_scale`, `a<i><j>`, `h<i><j>`, `q<i><j>`, `r<i><j>`,
        /// `m0<i>` or `p0<i><j>` with 1-based single-digit indices.
        #[serde(default)]
        free: Vec<String>,
    },
}

/// A model built from a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Ungm(Ungm),
    Ct(CoordinatedTurn),
    Linear(LinearGaussian),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn StateSpaceModel {
        match self {
            Model::Ungm(m) => m,
            Model::Ct(m) => m,
            Model::Linear(m) => m,
        }
    }

    /// Parameter vector matching the configured values.
    pub fn theta(&self) -> Vector {
        match self {
            Model::Ungm(m) => m.theta(),
            Model::Ct(m) => m.theta(),
            Model::Linear(m) => m.theta(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.as_dyn().state_dim()
    }

    /// Apply the initial-uncertainty sweep at `sigma` (coordinated-turn only).
    pub fn with_initial_sd(&self, sigma: f64, true_x0: &Vector) -> Result<Model> {
        match self {
            Model::Ct(m) => Ok(Model::Ct(initial_uncertainty_sweep(m, sigma, true_x0)?)),
            _ if sigma == 0.5 => Ok(self.clone()),
            _ => bail!("the initial-uncertainty sweep applies only to the coordinated-turn model"),
        }
    }
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        bail!("matrix '{name}' must be a non-empty list of equal-length rows");
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn one_based(s: &str, count: usize) -> Option<Vec<usize>> {
    if s.len() != count || !s.chars().all(|c| c.is_ascii_digit() && c != '0') {
        return None;
    }
    Some(s.chars().map(|c| c as usize - '1' as usize).collect())
}

fn linear_param(name: &str) -> Result<LinearParam> {
    let parse = |prefix: &str, count: usize| name.strip_prefix(prefix).and_then(|rest| one_based(rest, count));
    let p = match name {
        "q_scale" => LinearParam::QScale,
        "r_scale" => LinearParam::RScale,
        _ => {
            if let Some(ix) = parse("m0", 1) {
                LinearParam::M0(ix[0])
            } else if let Some(ix) = parse("p0", 2) {
                LinearParam::P0(ix[0], ix[1])
            } else if let Some(ix) = parse("a", 2) {
                LinearParam::A(ix[0], ix[1])
            } else if let Some(ix) = parse("h", 2) {
                LinearParam::H(ix[0], ix[1])
            } else if let Some(ix) = parse("q", 2) {
                LinearParam::Q(ix[0], ix[1])
            } else if let Some(ix) = parse("r", 2) {
                LinearParam::R(ix[0], ix[1])
            } else {
                bail!("unknown linear-model parameter '{name}'")
            }
        }
    };
    Ok(p)
}

fn ct_param(name: &str) -> Result<CtParam> {
    let index = |rest: &str| rest.parse::<usize>().ok().filter(|&i| i >= 1).map(|i| i - 1);
    if let Some(i) = name.strip_prefix("sqrt_r").and_then(index) {
        Ok(CtParam::SqrtR(i))
    } else if let Some(i) = name.strip_prefix('r').and_then(index) {
        Ok(CtParam::R(i))
    } else {
        bail!("unknown coordinated-turn parameter '{name}'")
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        match self {
            ModelSpec::Ungm { a, b, c, d, q, r, m0, p0, free } => {
                let base = Ungm::default();
                let free = free.iter().map(|s| s.parse::<UngmParam>()).collect::<sigma_core::Result<Vec<_>>>()?;
                let m = Ungm {
                    a: a.unwrap_or(base.a),
                    b: b.unwrap_or(base.b),
                    c: c.unwrap_or(base.c),
                    d: d.unwrap_or(base.d),
                    q: q.unwrap_or(base.q),
                    r: r.unwrap_or(base.r),
                    m0: m0.unwrap_or(base.m0),
                    p0: p0.unwrap_or(base.p0),
                    free,
                };
                if !(m.q > 0.0 && m.r > 0.0 && m.p0 >= 0.0) {
                    bail!("UNGM noise variances must be positive");
                }
                Ok(Model::Ungm(m))
            }
            ModelSpec::Ct { qc, qw, dt, sensors, r_diag, m0, p0_diag, free } => {
                let base = CoordinatedTurn::default();
                let mut m = CoordinatedTurn {
                    qc: qc.unwrap_or(base.qc),
                    qw: qw.unwrap_or(base.qw),
                    dt: dt.unwrap_or(base.dt),
                    sensors: sensors.clone().unwrap_or(base.sensors),
                    r_diag: r_diag.clone().unwrap_or(base.r_diag),
                    m0: m0.as_ref().map_or(base.m0, |v| Vector::from_column_slice(v)),
                    p0: p0_diag.as_ref().map_or(base.p0, |v| Matrix::from_diagonal(&Vector::from_column_slice(v))),
                    free: base.free,
                };
                if !free.is_empty() {
                    m.free = free.iter().map(|s| ct_param(s)).collect::<Result<_>>()?;
                }
                if m.dt <= 0.0 || m.r_diag.iter().any(|&r| r <= 0.0) {
                    bail!("coordinated-turn model needs dt > 0 and positive noise variances");
                }
                if m.r_diag.len() != m.sensors.len() || m.m0.len() != 5 || m.p0.nrows() != 5 {
                    bail!("coordinated-turn model needs one variance per sensor and a 5-dimensional prior");
                }
                if m.free.iter().any(|p| matches!(*p, CtParam::SqrtR(i) | CtParam::R(i) if i >= m.sensors.len())) {
                    bail!("free parameter refers to a missing sensor");
                }
                Ok(Model::Ct(m))
            }
            ModelSpec::Linear { a, h, q, r, m0, p0, free } => {
                let free = free.iter().map(|s| linear_param(s)).collect::<Result<Vec<_>>>()?;
                let (a, h, q, r, p0) = (matrix(a, "a")?, matrix(h, "h")?, matrix(q, "q")?, matrix(r, "r")?, matrix(p0, "p0")?);
                let n = a.nrows();
                let d = h.nrows();
                let shapes_ok = a.ncols() == n
                    && h.ncols() == n
                    && q.shape() == (n, n)
                    && r.shape() == (d, d)
                    && p0.shape() == (n, n)
                    && m0.len() == n;
                if !shapes_ok {
                    bail!("linear model matrices have inconsistent shapes");
                }
                Ok(Model::Linear(LinearGaussian::new(a, h, q, r, Vector::from_column_slice(m0), p0, free)))
            }
        }
    }
}

/// Evenly spaced values of one free parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Index into the model's free parameters.
    #[serde(default)]
    pub param: usize,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.points == 0 || self.lo.is_nan() || self.hi.is_nan() || self.lo > self.hi {
            bail!("grid needs at least one point and lo ≤ hi");
        }
        if self.points == 1 {
            return Ok(vec![self.lo]);
        }
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        Ok((0..self.points).map(|i| if i + 1 == self.points { self.hi } else { self.lo + step * i as f64 }).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub particles: usize,
    #[serde(default = "default_proposal")]
    pub proposal: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_proposal() -> String {
    "bootstrap".into()
}

impl ParticleSpec {
    pub fn proposal(&self) -> Result<Proposal> {
        Ok(self.proposal.parse()?)
    }
}

/// Optimizer overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub max_iterations: Option<usize>,
    pub gradient_tolerance: Option<f64>,
    pub initial_step: Option<f64>,
    pub log_space: Option<bool>,
}

impl OptimizerSpec {
    pub fn build(&self) -> Result<OptimizerConfig> {
        let d = OptimizerConfig::default();
        let cfg = OptimizerConfig {
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            gradient_tolerance: self.gradient_tolerance.unwrap_or(d.gradient_tolerance),
            initial_step: self.initial_step.unwrap_or(d.initial_step),
            log_space: self.log_space.unwrap_or(d.log_space),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Estimation method used by `mle` and `track-rmse`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    DirectSensitivity,
    DirectFisher,
    DirectFiniteDifference,
    Em,
}

impl Method {
    pub fn gradient_mode(self) -> Option<GradientMode> {
        match self {
            Method::DirectSensitivity => Some(GradientMode::Sensitivity),
            Method::DirectFisher => Some(GradientMode::Fisher),
            Method::DirectFiniteDifference => Some(GradientMode::FiniteDifference),
            Method::Em => None,
        }
    }
}

fn default_rules() -> Vec<String> {
    vec!["sym3".into()]
}

fn default_trajectories() -> usize {
    1
}

fn default_sigmas() -> Vec<f64> {
    vec![0.5]
}

fn default_em_iterations() -> usize {
    10
}

/// Everything one command needs. Every run is a pure function of this file
/// and the data files it references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    /// Rule specs such as `sym5`, `gh(3)` or `ut(1,0,0)`, or `ekf`.
    #[serde(default = "default_rules")]
    pub rules: Vec<String>,
    #[serde(default)]
    pub method: Method,
    /// Number of measurements per trajectory.
    #[serde(default)]
    pub steps: usize,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory of simulated trajectories (relative paths resolve against the
    /// config file). Without it, trajectories are simulated in memory.
    pub data: Option<PathBuf>,
    /// Parameter vector used for simulation, filtering and smoothing.
    pub theta: Option<Vec<f64>>,
    /// Starting point of estimation.
    pub theta0: Option<Vec<f64>>,
    pub grid: Option<GridSpec>,
    pub particle_filter: Option<ParticleSpec>,
    /// Initial-location standard deviations for the coordinated-turn sweep.
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    /// Rule whose estimates serve as the reference in MLE summaries.
    pub reference_rule: Option<String>,
    #[serde(default = "default_em_iterations")]
    pub em_iterations: usize,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    /// MLE estimates file consumed by `track-rmse`.
    pub estimates: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).context("invalid experiment configuration")?;
        cfg.model.build()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn model(&self) -> Result<Model> {
        self.model.build()
    }

    fn vector(&self, v: &Option<Vec<f64>>, model: &Model, name: &str) -> Result<Vector> {
        match v {
            None => Ok(model.theta()),
            Some(v) if v.len() == model.theta().len() => Ok(Vector::from_column_slice(v)),
            Some(v) => bail!("{name} has {} entries, the model has {} free parameters", v.len(), model.theta().len()),
        }
    }

    pub fn true_theta(&self, model: &Model) -> Result<Vector> {
        self.vector(&self.theta, model, "theta")
    }

    pub fn start_theta(&self, model: &Model) -> Result<Vector> {
        self.vector(&self.theta0, model, "theta0")
    }
}
