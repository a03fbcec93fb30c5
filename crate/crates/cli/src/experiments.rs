//! Experiment commands. Each returns its tables so callers can inspect them
//! before (or instead of) writing them out.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use sigma_core::baselines::{ekf_filter_pass, ekf_maximize_likelihood, ekf_rts_pass, pf_loglik};
use sigma_core::estimate::{em_iterate, log_likelihood, maximize_likelihood, OptimResult, Termination};
use sigma_core::gauss::{filter_pass, rts_pass};
use sigma_core::{cached_rule, CubatureRule, FilterResult, GaussState, Scheme, SimOutput, SmootherResult, Vector};

use crate::config::{ExperimentConfig, Method, Model};
use crate::table::{num, Table};

/// A sigma-point rule or the EKF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Ekf,
    Rule(Scheme),
}

impl FromStr for Estimator {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("ekf") {
            Ok(Estimator::Ekf)
        } else {
            Ok(Estimator::Rule(s.parse()?))
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Ekf => f.write_str("ekf"),
            Estimator::Rule(s) => write!(f, "{s}"),
        }
    }
}

impl Estimator {
    fn rule(&self, n: usize) -> Result<Option<Arc<CubatureRule>>> {
        match self {
            Estimator::Ekf => Ok(None),
            Estimator::Rule(s) => Ok(Some(cached_rule(s, n)?)),
        }
    }

    pub fn filter(&self, model: &Model, theta: &Vector, ys: &[Vector]) -> Result<FilterResult> {
        let m = model.as_dyn();
        Ok(match self.rule(m.state_dim())? {
            None => ekf_filter_pass(m, theta, ys)?,
            Some(r) => filter_pass(m, theta, ys, &r)?,
        })
    }

    pub fn smooth(&self, model: &Model, theta: &Vector, ys: &[Vector]) -> Result<SmootherResult> {
        let m = model.as_dyn();
        let f = self.filter(model, theta, ys)?;
        Ok(match self.rule(m.state_dim())? {
            None => ekf_rts_pass(&f, m, theta)?,
            Some(r) => rts_pass(&f, m, theta, &r)?,
        })
    }

    pub fn log_likelihood(&self, model: &Model, theta: &Vector, ys: &[Vector]) -> Result<f64> {
        let m = model.as_dyn();
        Ok(match self.rule(m.state_dim())? {
            None => sigma_core::baselines::ekf_log_likelihood(m, theta, ys)?,
            Some(r) => log_likelihood(m, theta, ys, &r)?,
        })
    }

    /// Parameter estimate by the configured method.
    pub fn estimate(&self, model: &Model, theta0: &Vector, ys: &[Vector], cfg: &ExperimentConfig) -> Result<Estimate> {
        let m = model.as_dyn();
        let opt = cfg.optimizer.build()?;
        let rule = self.rule(m.state_dim())?;
        match (cfg.method.gradient_mode(), rule) {
            (_, None) if cfg.method == Method::Em => bail!("EM needs a sigma-point rule, not the EKF"),
            (_, None) => Ok(Estimate::from_optim(ekf_maximize_likelihood(m, theta0, ys, &opt)?)),
            (Some(mode), Some(r)) => Ok(Estimate::from_optim(maximize_likelihood(m, theta0, ys, &r, &opt, mode)?)),
            (None, Some(r)) => {
                let Estimator::Rule(scheme) = self else { unreachable!("rule implies a scheme") };
                let r2 = cached_rule(scheme, 2 * m.state_dim())?;
                let tr = em_iterate(m, theta0, ys, &r, &r2, cfg.em_iterations, &opt)?;
                let theta = tr.thetas.last().expect("trace holds θ⁰").clone();
                Ok(Estimate {
                    log_likelihood: log_likelihood(m, &theta, ys, &r)?,
                    theta,
                    iterations: cfg.em_iterations,
                    termination: "em-iterations".into(),
                    evaluations: 0,
                    trace: Vec::new(),
                })
            }
        }
    }
}

/// Outcome of one estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub theta: Vector,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub termination: String,
    pub evaluations: u64,
    pub trace: Vec<sigma_core::estimate::TraceRow>,
}

impl Estimate {
    fn from_optim(r: OptimResult) -> Self {
        let termination = match r.termination {
            Termination::GradientTolerance => "gradient-tolerance",
            Termination::StepTolerance => "step-tolerance",
            Termination::MaxIterations => "max-iterations",
        };
        Estimate {
            evaluations: r.trace.last().map_or(0, |row| row.evaluations),
            theta: r.theta,
            log_likelihood: r.objective,
            iterations: r.iterations,
            termination: termination.into(),
            trace: r.trace,
        }
    }
}

/// Tables, JSON documents and a free-form log produced by a command.
#[derive(Debug, Default)]
pub struct Outputs {
    pub tables: Vec<(String, Table)>,
    pub json: Vec<(String, serde_json::Value)>,
    /// Wall-clock timings; not part of the reproducible output.
    pub log: Vec<String>,
    /// Failed cells and runs that did not stop the command.
    pub warnings: Vec<String>,
}

impl Outputs {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, t) in &self.tables {
            t.write(&dir.join(name))?;
        }
        for (name, v) in &self.json {
            std::fs::write(dir.join(name), serde_json::to_string_pretty(v)? + "\n")?;
        }
        if !self.log.is_empty() || !self.warnings.is_empty() {
            let lines: Vec<&str> = self.log.iter().chain(&self.warnings).map(String::as_str).collect();
            std::fs::write(dir.join("run.log"), lines.join("\n") + "\n")?;
        }
        Ok(())
    }
}

fn estimators(cfg: &ExperimentConfig) -> Result<Vec<Estimator>> {
    if cfg.rules.is_empty() {
        bail!("no rules configured");
    }
    cfg.rules.iter().map(|s| s.parse()).collect()
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn dataset_name(trajectory: usize) -> String {
    format!("trajectory_{trajectory:04}.csv")
}

fn simulation_table(sim: &SimOutput) -> Table {
    let n = sim.states[0].len();
    let d = sim.measurements.first().map_or(0, Vector::len);
    let mut t = Table::new(std::iter::once("step".to_string()).chain(indexed("x", n)).chain(indexed("y", d)));
    for (k, x) in sim.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().map(|&v| num(v)));
        match k.checked_sub(1).map(|i| &sim.measurements[i]) {
            Some(y) => row.extend(y.iter().map(|&v| num(v))),
            None => row.extend(std::iter::repeat_n(String::new(), d)),
        }
        t.push(row);
    }
    t
}

fn parse_simulation(t: &Table, n: usize, d: usize, seed: u64, trajectory: u64) -> Result<SimOutput> {
    let xs: Vec<usize> = indexed("x", n).map(|c| t.column(&c).with_context(|| format!("missing column {c}"))).collect::<Result<_>>()?;
    let ys: Vec<usize> = indexed("y", d).map(|c| t.column(&c).with_context(|| format!("missing column {c}"))).collect::<Result<_>>()?;
    let parse = |row: &[String], cols: &[usize]| -> Result<Vector> {
        let v = cols.iter().map(|&c| row[c].parse::<f64>().with_context(|| format!("bad number '{}'", row[c]))).collect::<Result<Vec<_>>>()?;
        Ok(Vector::from_vec(v))
    };
    let mut states = Vec::with_capacity(t.rows.len());
    let mut measurements = Vec::with_capacity(t.rows.len().saturating_sub(1));
    for (k, row) in t.rows.iter().enumerate() {
        states.push(parse(row, &xs)?);
        if k > 0 {
            measurements.push(parse(row, &ys)?);
        }
    }
    if states.is_empty() {
        bail!("empty trajectory file");
    }
    Ok(SimOutput { states, measurements, seed, trajectory })
}

/// Trajectories from the configured data directory, or simulated in memory.
pub fn datasets(cfg: &ExperimentConfig, model: &Model) -> Result<Vec<SimOutput>> {
    let m = model.as_dyn();
    match &cfg.data {
        Some(dir) => {
            let dir = cfg.resolve(dir);
            (0..cfg.trajectories)
                .map(|i| {
                    let path = dir.join(dataset_name(i));
                    let t = Table::read(&path)?;
                    parse_simulation(&t, m.state_dim(), m.meas_dim(), cfg.seed, i as u64).with_context(|| format!("parsing {}", path.display()))
                })
                .collect()
        }
        None => {
            let theta = cfg.true_theta(model)?;
            Ok((0..cfg.trajectories).into_par_iter().map(|i| sigma_core::models::simulate(m, &theta, cfg.steps, cfg.seed, i as u64)).collect())
        }
    }
}

/// `simulate`: one CSV per trajectory plus a JSON sidecar with `θ` and the seed.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Outputs> {
    let model = cfg.model()?;
    let theta = cfg.true_theta(&model)?;
    let sims: Vec<SimOutput> =
        (0..cfg.trajectories).into_par_iter().map(|i| sigma_core::models::simulate(model.as_dyn(), &theta, cfg.steps, cfg.seed, i as u64)).collect();
    let mut out = Outputs::default();
    for (i, s) in sims.iter().enumerate() {
        out.tables.push((dataset_name(i), simulation_table(s)));
    }
    out.json.push((
        "simulation.json".into(),
        json!({
            "model": cfg.model,
            "theta": theta.iter().copied().collect::<Vec<_>>(),
            "seed": cfg.seed,
            "steps": cfg.steps,
            "trajectories": cfg.trajectories,
        }),
    ));
    Ok(out)
}

fn moments_header(n: usize) -> Vec<String> {
    let mut h = vec!["rule".to_string(), "trajectory".into(), "step".into()];
    h.extend(indexed("m", n));
    for i in 1..=n {
        h.extend((1..=n).map(|j| format!("p{i}_{j}")));
    }
    h
}

fn moments_row(rule: &Estimator, trajectory: usize, k: usize, s: &GaussState) -> Vec<String> {
    let mut row = vec![rule.to_string(), trajectory.to_string(), k.to_string()];
    row.extend(s.mean.iter().map(|&v| num(v)));
    let n = s.mean.len();
    for i in 0..n {
        row.extend((0..n).map(|j| num(s.cov[(i, j)])));
    }
    row
}

type Job = (Estimator, usize);

fn jobs(ests: &[Estimator], trajectories: usize) -> Vec<Job> {
    ests.iter().flat_map(|&e| (0..trajectories).map(move |t| (e, t))).collect()
}

/// `filter`: filtered means and covariances for `k = 0..T` plus cumulative log-likelihood.
pub fn filter(cfg: &ExperimentConfig) -> Result<Outputs> {
    let model = cfg.model()?;
    let theta = cfg.true_theta(&model)?;
    let data = datasets(cfg, &model)?;
    let n = model.state_dim();
    let mut header = moments_header(n);
    header.push("loglik".into());
    let results: Vec<Result<FilterResult>> =
        jobs(&estimators(cfg)?, data.len()).into_par_iter().map(|(e, t)| e.filter(&model, &theta, &data[t].measurements)).collect();
    let mut table = Table::new(header);
    for ((e, t), r) in jobs(&estimators(cfg)?, data.len()).into_iter().zip(results) {
        let f = r.with_context(|| format!("filtering trajectory {t} with {e}"))?;
        let mut cum = 0.0;
        for k in 0..=f.len() {
            if k > 0 {
                cum += f.steps[k - 1].log_likelihood;
            }
            let mut row = moments_row(&e, t, k, f.filtered(k));
            row.push(num(cum));
            table.push(row);
        }
    }
    Ok(Outputs { tables: vec![("filter.csv".into(), table)], ..Default::default() })
}

/// `smooth`: smoothed means and covariances for `k = 0..T`.
pub fn smooth(cfg: &ExperimentConfig) -> Result<Outputs> {
    let model = cfg.model()?;
    let theta = cfg.true_theta(&model)?;
    let data = datasets(cfg, &model)?;
    let ests = estimators(cfg)?;
    let results: Vec<Result<SmootherResult>> =
        jobs(&ests, data.len()).into_par_iter().map(|(e, t)| e.smooth(&model, &theta, &data[t].measurements)).collect();
    let mut table = Table::new(moments_header(model.state_dim()));
    for ((e, t), r) in jobs(&ests, data.len()).into_iter().zip(results) {
        let s = r.with_context(|| format!("smoothing trajectory {t} with {e}"))?;
        for k in 0..=s.horizon() {
            table.push(moments_row(&e, t, k, s.smoothed(k)));
        }
    }
    Ok(Outputs { tables: vec![("smooth.csv".into(), table)], ..Default::default() })
}

/// `likelihood-grid`: log-likelihood of every rule (and optionally the
/// particle filter) over a one-parameter grid. Failed cells hold `NaN`.
pub fn likelihood_grid(cfg: &ExperimentConfig) -> Result<Outputs> {
    let model = cfg.model()?;
    let base = cfg.true_theta(&model)?;
    let grid = cfg.grid.as_ref().context("likelihood-grid needs a 'grid' section")?;
    if grid.param >= base.len() {
        bail!("grid parameter {} out of range for {} free parameters", grid.param, base.len());
    }
    let values = grid.values()?;
    let data = datasets(cfg, &model)?;
    let ests = estimators(cfg)?;
    let pf = match &cfg.particle_filter {
        Some(p) => Some((p.particles, p.seed, p.proposal()?)),
        None => None,
    };
    let columns = ests.len() + usize::from(pf.is_some());
    let cells: Vec<(usize, usize, usize)> =
        (0..data.len()).flat_map(|t| (0..values.len()).flat_map(move |g| (0..columns).map(move |c| (t, g, c)))).collect();
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(t, g, c)| {
            let mut th = base.clone();
            th[grid.param] = values[g];
            let ys = &data[t].measurements;
            match ests.get(c) {
                Some(e) => e.log_likelihood(&model, &th, ys),
                None => {
                    let (n, seed, proposal) = pf.expect("extra column is the particle filter");
                    Ok(pf_loglik(model.as_dyn(), &th, ys, n, seed, proposal)?)
                }
            }
        })
        .collect();

    let mut header = vec!["trajectory".to_string(), "value".into()];
    header.extend(ests.iter().map(|e| e.to_string()));
    if pf.is_some() {
        header.push("pf".into());
    }
    let mut table = Table::new(header.clone());
    let mut warnings = Vec::new();
    for (row_cells, row_results) in cells.chunks(columns).zip(results.chunks(columns)) {
        let (t, g, _) = row_cells[0];
        let mut row = vec![t.to_string(), num(values[g])];
        for (&(_, _, c), r) in row_cells.iter().zip(row_results) {
            match r {
                Ok(v) => row.push(num(*v)),
                Err(e) => {
                    warnings.push(format!("trajectory {t} value {} column {}: {e}", num(values[g]), header[c + 2]));
                    row.push(num(f64::NAN));
                }
            }
        }
        table.push(row);
    }
    Ok(Outputs { tables: vec![("likelihood_grid.csv".into(), table)], warnings, ..Default::default() })
}

/// One estimation task of the `mle` sweep.
#[derive(Debug, Clone, Copy)]
struct MleJob {
    sigma: f64,
    trajectory: usize,
    estimator: Estimator,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Per-(σ, trajectory, rule) estimates of the `mle` sweep, in a fixed order.
pub struct MleRuns {
    pub sigmas: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub trajectories: usize,
    pub results: Vec<(f64, usize, Estimator, Result<Estimate>, f64)>,
}

impl MleRuns {
    pub fn get(&self, sigma: f64, trajectory: usize, est: &Estimator) -> Option<&Estimate> {
        self.results.iter().find(|r| r.0 == sigma && r.1 == trajectory && r.2 == *est).and_then(|r| r.3.as_ref().ok())
    }
}

fn sweep_model(model: &Model, sigma: f64, sim: &SimOutput) -> Result<Model> {
    model.with_initial_sd(sigma, &sim.states[0])
}

/// Run every estimator on every trajectory at every σ of the sweep.
pub fn mle_runs(cfg: &ExperimentConfig) -> Result<MleRuns> {
    let model = cfg.model()?;
    let theta0 = cfg.start_theta(&model)?;
    let data = datasets(cfg, &model)?;
    let mut ests = estimators(cfg)?;
    if let Some(r) = &cfg.reference_rule {
        let r: Estimator = r.parse()?;
        if !ests.contains(&r) {
            ests.push(r);
        }
    }
    let mut all = Vec::new();
    for &sigma in &cfg.sigmas {
        for trajectory in 0..data.len() {
            all.extend(ests.iter().map(|&estimator| MleJob { sigma, trajectory, estimator }));
        }
    }
    let results = all
        .par_iter()
        .map(|j| {
            let start = Instant::now();
            let r = sweep_model(&model, j.sigma, &data[j.trajectory])
                .and_then(|m| j.estimator.estimate(&m, &theta0, &data[j.trajectory].measurements, cfg));
            (j.sigma, j.trajectory, j.estimator, r, start.elapsed().as_secs_f64())
        })
        .collect();
    Ok(MleRuns { sigmas: cfg.sigmas.clone(), estimators: ests, trajectories: data.len(), results })
}

/// `mle`: per-trajectory estimates, optimizer traces and a summary of median
/// absolute deviations from the reference rule.
pub fn mle(cfg: &ExperimentConfig) -> Result<Outputs> {
    let runs = mle_runs(cfg)?;
    let m = cfg.model()?.theta().len();
    let mut est_table = Table::new(
        ["sigma", "trajectory", "rule"]
            .into_iter()
            .map(String::from)
            .chain(indexed("theta", m))
            .chain(["loglik", "iterations", "termination", "evaluations", "status"].map(String::from)),
    );
    let mut trace = Table::new(
        ["sigma", "trajectory", "rule", "iteration"]
            .into_iter()
            .map(String::from)
            .chain(indexed("theta", m))
            .chain(["loglik", "gradient_norm", "evaluations"].map(String::from)),
    );
    let mut log = Vec::new();
    let mut warnings = Vec::new();
    for (sigma, t, e, r, secs) in &runs.results {
        let key = vec![num(*sigma), t.to_string(), e.to_string()];
        log.push(format!("sigma {} trajectory {t} rule {e}: {secs:.3} s", num(*sigma)));
        match r {
            Ok(est) => {
                let mut row = key.clone();
                row.extend(est.theta.iter().map(|&v| num(v)));
                row.extend([num(est.log_likelihood), est.iterations.to_string(), est.termination.clone(), est.evaluations.to_string(), "ok".into()]);
                est_table.push(row);
                for tr in &est.trace {
                    let mut row = key.clone();
                    row.push(tr.iteration.to_string());
                    row.extend(tr.theta.iter().map(|&v| num(v)));
                    row.extend([num(tr.objective), num(tr.gradient_norm), tr.evaluations.to_string()]);
                    trace.push(row);
                    log.push(format!("sigma {} trajectory {t} rule {e} iteration {} at {:.3} s", num(*sigma), tr.iteration, tr.wall_time));
                }
            }
            Err(err) => {
                warnings.push(format!("sigma {} trajectory {t} rule {e} failed: {err:#}", num(*sigma)));
                let mut row = key;
                row.extend(std::iter::repeat_n(num(f64::NAN), m + 1));
                row.extend([String::new(), String::new(), String::new(), format!("error: {err}")]);
                est_table.push(row);
            }
        }
    }

    let reference: Option<Estimator> = cfg.reference_rule.as_deref().map(str::parse).transpose()?;
    let mut summary = Table::new(
        ["sigma", "rule"]
            .into_iter()
            .map(String::from)
            .chain(indexed("median_abs_dev", m))
            .chain(["succeeded", "failed", "median_evaluations"].map(String::from)),
    );
    for &sigma in &runs.sigmas {
        for e in &runs.estimators {
            let ok: Vec<(usize, &Estimate)> = (0..runs.trajectories).filter_map(|t| runs.get(sigma, t, e).map(|x| (t, x))).collect();
            let failed = runs.trajectories - ok.len();
            let mut row = vec![num(sigma), e.to_string()];
            for i in 0..m {
                let mut devs: Vec<f64> = match reference {
                    Some(r) => ok.iter().filter_map(|(t, x)| runs.get(sigma, *t, &r).map(|rx| (x.theta[i] - rx.theta[i]).abs())).collect(),
                    None => Vec::new(),
                };
                row.push(median(&mut devs).map_or(num(f64::NAN), num));
            }
            let mut evals: Vec<f64> = ok.iter().map(|(_, x)| x.evaluations as f64).collect();
            row.extend([ok.len().to_string(), failed.to_string(), median(&mut evals).map_or(num(f64::NAN), num)]);
            summary.push(row);
        }
    }
    Ok(Outputs {
        tables: vec![("estimates.csv".into(), est_table), ("mle_summary.csv".into(), summary), ("mle_trace.csv".into(), trace)],
        log,
        warnings,
        ..Default::default()
    })
}

/// `em`: θ, `Q` and the filter log-likelihood per EM iteration per rule, with
/// direct-MLE estimates alongside.
pub fn em(cfg: &ExperimentConfig) -> Result<Outputs> {
    let model = cfg.model()?;
    let theta0 = cfg.start_theta(&model)?;
    let data = datasets(cfg, &model)?;
    let ests = estimators(cfg)?;
    let m = theta0.len();
    let n = model.state_dim();
    let opt = cfg.optimizer.build()?;
    let work = jobs(&ests, data.len());
    let results: Vec<Result<_>> = work
        .par_iter()
        .map(|&(e, t)| {
            let Estimator::Rule(scheme) = e else { bail!("EM needs a sigma-point rule, not the EKF") };
            let (r, r2) = (cached_rule(&scheme, n)?, cached_rule(&scheme, 2 * n)?);
            let ys = &data[t].measurements;
            let trace = em_iterate(model.as_dyn(), &theta0, ys, &r, &r2, cfg.em_iterations, &opt)?;
            let direct = maximize_likelihood(model.as_dyn(), &theta0, ys, &r, &opt, sigma_core::estimate::GradientMode::Sensitivity)?;
            Ok((trace, direct))
        })
        .collect();
    let mut trace_table = Table::new(
        ["rule", "trajectory", "iteration"].into_iter().map(String::from).chain(indexed("theta", m)).chain(["q_value", "loglik"].map(String::from)),
    );
    let mut mle_table =
        Table::new(["rule", "trajectory"].into_iter().map(String::from).chain(indexed("theta", m)).chain(["loglik"].map(String::from)));
    for (&(e, t), r) in work.iter().zip(results) {
        let (tr, direct) = r.with_context(|| format!("EM on trajectory {t} with {e}"))?;
        for (i, th) in tr.thetas.iter().enumerate() {
            let mut row = vec![e.to_string(), t.to_string(), i.to_string()];
            row.extend(th.iter().map(|&v| num(v)));
            row.push(i.checked_sub(1).map_or(String::new(), |j| num(tr.q_values[j])));
            row.push(num(tr.log_likelihoods[i]));
            trace_table.push(row);
        }
        let mut row = vec![e.to_string(), t.to_string()];
        row.extend(direct.theta.iter().map(|&v| num(v)));
        row.push(num(direct.objective));
        mle_table.push(row);
    }
    Ok(Outputs { tables: vec![("em_trace.csv".into(), trace_table), ("em_mle.csv".into(), mle_table)], ..Default::default() })
}

/// Root-mean-square error of the smoothed location (the first two state
/// components, or all of them in lower dimension) over `k = 0..T`.
pub fn location_rmse(smoothed: &SmootherResult, truth: &[Vector]) -> f64 {
    let dims = truth[0].len().min(2);
    let sq: f64 = (0..truth.len()).map(|k| (0..dims).map(|i| (smoothed.smoothed(k).mean[i] - truth[k][i]).powi(2)).sum::<f64>()).sum();
    (sq / truth.len() as f64).sqrt()
}

fn read_estimates(path: &Path, m: usize) -> Result<Vec<(f64, usize, String, Vector)>> {
    let t = Table::read(path)?;
    let col = |name: &str| t.column(name).with_context(|| format!("{}: no column '{name}'", path.display()));
    let (cs, ct, cr, cst) = (col("sigma")?, col("trajectory")?, col("rule")?, col("status")?);
    let thetas: Vec<usize> = indexed("theta", m).map(|c| col(&c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for row in t.rows.iter().filter(|r| r[cst] == "ok") {
        let th = thetas.iter().map(|&c| row[c].parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>()?;
        out.push((row[cs].parse()?, row[ct].parse()?, row[cr].clone(), Vector::from_vec(th)));
    }
    Ok(out)
}

/// `track-rmse`: smooth every trajectory at its estimated `θ` and report the
/// mean location RMSE per σ and rule.
pub fn track_rmse(cfg: &ExperimentConfig) -> Result<Outputs> {
    let model = cfg.model()?;
    let data = datasets(cfg, &model)?;
    let ests = estimators(cfg)?;
    let m = model.theta().len();
    let estimates: Vec<(f64, usize, String, Vector)> = match &cfg.estimates {
        Some(p) => read_estimates(&cfg.resolve(p), m)?,
        None => mle_runs(cfg)?
            .results
            .into_iter()
            .filter_map(|(s, t, e, r, _)| r.ok().map(|x| (s, t, e.to_string(), x.theta)))
            .collect(),
    };
    let mut cells = Vec::new();
    for &s in &cfg.sigmas {
        for &e in &ests {
            cells.extend((0..data.len()).map(|t| (s, e, t)));
        }
    }
    let rmse: Vec<Option<Result<f64>>> = cells
        .par_iter()
        .map(|&(s, e, t)| {
            let name = e.to_string();
            let theta = &estimates.iter().find(|x| x.0 == s && x.1 == t && x.2 == name)?.3;
            Some(sweep_model(&model, s, &data[t]).and_then(|mm| {
                let sm = e.smooth(&mm, theta, &data[t].measurements)?;
                Ok(location_rmse(&sm, &data[t].states))
            }))
        })
        .collect();
    let mut table = Table::new(["sigma", "rule", "mean_rmse", "trajectories", "missing"]);
    let mut warnings = Vec::new();
    for (chunk_cells, chunk) in cells.chunks(data.len().max(1)).zip(rmse.chunks(data.len().max(1))) {
        let (s, e, _) = chunk_cells[0];
        let mut vals = Vec::new();
        for (&(_, _, t), r) in chunk_cells.iter().zip(chunk) {
            match r {
                Some(Ok(v)) => vals.push(*v),
                Some(Err(err)) => warnings.push(format!("sigma {} trajectory {t} rule {e}: {err:#}", num(s))),
                None => warnings.push(format!("sigma {} trajectory {t} rule {e}: no estimate", num(s))),
            }
        }
        let mean = if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        table.push(vec![num(s), e.to_string(), num(mean), vals.len().to_string(), (chunk.len() - vals.len()).to_string()]);
    }
    Ok(Outputs { tables: vec![("track_rmse.csv".into(), table)], warnings, ..Default::default() })
}
