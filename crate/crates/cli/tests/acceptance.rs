//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigma_cli::experiments;
use sigma_cli::ExperimentConfig;
use sigma_core::baselines::{ekf_filter_pass, ekf_rts_pass, pf_loglik, Proposal};
use sigma_core::estimate::{
    em_iterate, em_statistics, loglik_gradient_fisher, loglik_gradient_sensitivity, log_likelihood, m_step_closed_form, minimize, Objective,
    OptimizerConfig, QFunction,
};
use sigma_core::gauss::{filter_pass, rts_pass};
use sigma_core::models::{simulate, CoordinatedTurn, LinearGaussian, LinearInParams, LinearParam, Ungm, UngmParam};
use sigma_core::{build_rule, cached_rule, point_count, Matrix, Scheme, StateSpaceModel, Vector, WeightKind};

/// Criteria whose failure is recorded, with its analysis, in the decisions ledger.
const KNOWN_FAILURES: &[u32] = &[5, 8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs().join(name)).expect("shipped config parses")
}

fn rule(spec: &str, n: usize) -> std::sync::Arc<sigma_core::CubatureRule> {
    cached_rule(&spec.parse().unwrap(), n).unwrap()
}

fn double_factorial(k: u32) -> f64 {
    (1..=k).rev().step_by(2).map(f64::from).product()
}

/// `E[∏ xᵢ^aᵢ]` for `x ~ N(0, I)`.
fn gaussian_moment(a: &[u32]) -> f64 {
    if a.iter().any(|&k| k % 2 == 1) {
        0.0
    } else {
        a.iter().map(|&k| if k == 0 { 1.0 } else { double_factorial(k - 1) }).product()
    }
}

fn exponents(n: usize, max_total: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=max_total - used).map(move |k| {
                    let mut e = e.clone();
                    e.push(k);
                    e
                })
            })
            .collect();
    }
    out
}

fn criterion_1() -> Outcome {
    let mut schemes = vec!["sym3", "sym5", "sym7", "sym9", "ut(1,0,0)"].into_iter().map(String::from).collect::<Vec<_>>();
    schemes.extend((2..=6).map(|p| format!("gh({p})")));
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for s in &schemes {
        let scheme: Scheme = s.parse().unwrap();
        for n in 1..=5 {
            let r = build_rule(&scheme, n).unwrap();
            let w = r.weights(WeightKind::Mean);
            let pts: Vec<Vec<f64>> = (0..r.len()).map(|j| r.point(j).iter().copied().collect()).collect();
            for a in exponents(n, scheme.degree() as u32) {
                let approx: f64 = pts.iter().zip(w).map(|(p, &wj)| wj * p.iter().zip(&a).map(|(x, &k)| x.powi(k as i32)).product::<f64>()).sum();
                worst = worst.max((approx - gaussian_moment(&a)).abs());
                checked += 1;
            }
        }
    }
    outcome(worst < 1e-9, format!("{checked} moments, max error {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    // Series of the point-count figure for n = 1..9.
    let figure: [(&str, [usize; 9]); 8] = [
        ("ut(1,0,0)", [3, 5, 7, 9, 11, 13, 15, 17, 19]),
        ("sym5", [3, 9, 19, 33, 51, 73, 99, 129, 163]),
        ("sym7", [5, 17, 45, 97, 181, 305, 477, 705, 997]),
        ("sym9", [5, 25, 77, 193, 421, 825, 1485, 2497, 3973]),
        ("gh(3)", [3, 9, 27, 81, 243, 729, 2187, 6561, 19683]),
        ("gh(5)", [5, 25, 125, 625, 3125, 15625, 78125, 390625, 1953125]),
        ("gh(7)", [7, 49, 343, 2401, 16807, 117649, 823543, 5764801, 40353607]),
        ("gh(9)", [9, 81, 729, 6561, 59049, 531441, 4782969, 43046721, 387420489]),
    ];
    let mut mismatches = Vec::new();
    for (s, counts) in figure {
        for (i, &c) in counts.iter().enumerate() {
            let got = point_count(&s.parse().unwrap(), i + 1).unwrap();
            if got != c {
                mismatches.push(format!("{s} n={}: {got} vs {c}", i + 1));
            }
        }
    }
    // The degree-3 symmetric rule drops the zero-weight centre of ut(1,0,0).
    for n in 1..=9 {
        let got = point_count(&Scheme::SYM3, n).unwrap();
        if got != 2 * n {
            mismatches.push(format!("sym3 n={n}: {got}"));
        }
    }
    for (s, n) in [("sym5", 4), ("sym7", 3), ("sym9", 2), ("gh(3)", 3)] {
        let built = build_rule(&s.parse().unwrap(), n).unwrap().len();
        if built != point_count(&s.parse().unwrap(), n).unwrap() {
            mismatches.push(format!("{s} n={n}: built {built}"));
        }
    }
    outcome(mismatches.is_empty(), if mismatches.is_empty() { "81 counts match".into() } else { mismatches.join("; ") })
}

struct KalmanOut {
    filtered: Vec<(Vector, Matrix)>,
    smoothed: Vec<(Vector, Matrix)>,
    loglik: f64,
}

/// Textbook Kalman filter and RTS smoother.
fn kalman(a: &Matrix, h: &Matrix, q: &Matrix, r: &Matrix, m0: &Vector, p0: &Matrix, ys: &[Vector]) -> KalmanOut {
    let mut filtered = vec![(m0.clone(), p0.clone())];
    let mut predicted = Vec::new();
    let mut loglik = 0.0;
    for y in ys {
        let (m, p) = filtered.last().unwrap();
        let mp = a * m;
        let pp = a * p * a.transpose() + q;
        let s = h * &pp * h.transpose() + r;
        let si = s.clone().try_inverse().unwrap();
        let k = &pp * h.transpose() * &si;
        let v = y - h * &mp;
        loglik += -0.5 * (y.len() as f64 * (2.0 * std::f64::consts::PI).ln() + s.determinant().ln() + (v.transpose() * &si * &v)[0]);
        filtered.push((&mp + &k * &v, &pp - &k * &s * k.transpose()));
        predicted.push((mp, pp));
    }
    let t = ys.len();
    let mut smoothed = vec![filtered[t].clone()];
    for k in (0..t).rev() {
        let (m, p) = &filtered[k];
        let (mp, pp) = &predicted[k];
        let g = p * a.transpose() * pp.clone().try_inverse().unwrap();
        let (ms, ps) = smoothed.last().unwrap();
        let m_new = m + &g * (ms - mp);
        let p_new = p + &g * (ps - pp) * g.transpose();
        smoothed.push((m_new, p_new));
    }
    smoothed.reverse();
    KalmanOut { filtered, smoothed, loglik }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let l = random_matrix(rng, n, n);
    &l * l.transpose() * 0.3 + Matrix::identity(n, n) * floor
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let b = random_matrix(&mut rng, 3, 3);
    let a = &b * (0.95 / b.clone().svd(false, false).singular_values.max());
    let h = random_matrix(&mut rng, 2, 3);
    let (q, r, p0) = (random_spd(&mut rng, 3, 0.1), random_spd(&mut rng, 2, 0.2), random_spd(&mut rng, 3, 0.5));
    let m0 = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
    let model = LinearGaussian::new(a.clone(), h.clone(), q.clone(), r.clone(), m0.clone(), p0.clone(), vec![LinearParam::QScale]);
    let th = model.theta();
    let ys = simulate(&model, &th, 200, 12, 0).measurements;
    let oracle = kalman(&a, &h, &q, &r, &m0, &p0, &ys);

    let mut methods: Vec<String> = ["sym3", "sym5", "sym7", "sym9", "ut(1,0,0)", "ut(0.5,2,1)"].map(String::from).to_vec();
    methods.extend((2..=6).map(|p| format!("gh({p})")));
    methods.push("ekf".into());
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for m in &methods {
        let (f, s) = if m == "ekf" {
            let f = ekf_filter_pass(&model, &th, &ys).unwrap();
            let s = ekf_rts_pass(&f, &model, &th).unwrap();
            (f, s)
        } else {
            let r = rule(m, 3);
            let f = filter_pass(&model, &th, &ys, &r).unwrap();
            let s = rts_pass(&f, &model, &th, &r).unwrap();
            (f, s)
        };
        let mut err = (f.log_likelihood - oracle.loglik).abs();
        for k in 0..=ys.len() {
            err = err
                .max((&f.filtered(k).mean - &oracle.filtered[k].0).amax())
                .max((&f.filtered(k).cov - &oracle.filtered[k].1).amax())
                .max((&s.smoothed(k).mean - &oracle.smoothed[k].0).amax())
                .max((&s.smoothed(k).cov - &oracle.smoothed[k].1).amax());
        }
        if err > worst {
            worst = err;
            worst_at = m.clone();
        }
    }
    outcome(worst < 1e-8, format!("{} methods, max deviation {worst:.2e} ({worst_at})", methods.len()))
}

fn central_difference<M: StateSpaceModel>(model: &M, th: &Vector, ys: &[Vector], r: &sigma_core::CubatureRule, i: usize) -> f64 {
    let h = 1e-6 * th[i].abs().max(1e-3);
    let mut tp = th.clone();
    tp[i] += h;
    let mut tm = th.clone();
    tm[i] -= h;
    (log_likelihood(model, &tp, ys, r).unwrap() - log_likelihood(model, &tm, ys, r).unwrap()) / (2.0 * h)
}

fn relative_gradient_error<M: StateSpaceModel>(model: &M, th: &Vector, ys: &[Vector], r: &sigma_core::CubatureRule) -> f64 {
    let g = loglik_gradient_sensitivity(model, th, ys, r).unwrap();
    (0..th.len()).map(|i| (g[i] - central_difference(model, th, ys, r, i)).abs() / g[i].abs().max(1e-8)).fold(0.0, f64::max)
}

fn linear_variance_model() -> LinearGaussian {
    LinearGaussian::new(
        Matrix::from_row_slice(2, 2, &[0.8, 0.3, -0.2, 0.9]),
        Matrix::from_row_slice(1, 2, &[1.0, 0.5]),
        Matrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3]),
        Matrix::from_element(1, 1, 0.6),
        Vector::zeros(2),
        Matrix::identity(2, 2),
        vec![LinearParam::QScale, LinearParam::R(0, 0)],
    )
}

fn criterion_4() -> Outcome {
    let lin = linear_variance_model();
    let lin_th = Vector::from_vec(vec![1.3, 0.45]);
    let lin_ys = simulate(&lin, &lin.theta(), 100, 2, 0).measurements;
    let e_lin = relative_gradient_error(&lin, &lin_th, &lin_ys, &rule("sym3", 2));

    let ungm = Ungm::default().with_free(vec![UngmParam::A, UngmParam::B, UngmParam::C]);
    let u_ys = simulate(&ungm, &ungm.theta(), 100, 1, 0).measurements;
    let u_th = Vector::from_vec(vec![0.45, 24.0, 7.9]);
    let e_ungm = relative_gradient_error(&ungm, &u_th, &u_ys, &rule("sym5", 1));

    let ct = CoordinatedTurn::default();
    let c_ys = simulate(&ct, &ct.theta(), 50, 2024, 0).measurements;
    let e_ct = relative_gradient_error(&ct, &Vector::from_element(1, 0.04), &c_ys, &rule("sym5", 5));

    let (r, r2) = (rule("sym5", 2), rule("sym5", 4));
    let gs = loglik_gradient_sensitivity(&lin, &lin_th, &lin_ys, &r).unwrap();
    let gf = loglik_gradient_fisher(&lin, &lin_th, &lin_ys, &r, &r2).unwrap();
    let e_fisher = (&gs - &gf).amax();

    let pass = e_lin < 1e-4 && e_ungm < 1e-4 && e_ct < 1e-4 && e_fisher < 1e-6;
    outcome(pass, format!("rel. errors linear {e_lin:.1e}, UNGM {e_ungm:.1e}, CT {e_ct:.1e}; |Fisher − sensitivity| {e_fisher:.1e}"))
}

fn criterion_5() -> Outcome {
    let cfg = load("ct_simulate.json");
    let model = cfg.model().unwrap();
    let ys = experiments::datasets(&cfg, &model).unwrap().remove(0).measurements;
    let m = model.as_dyn();
    let grid: Vec<f64> = (0..=20).map(|i| 0.039 + 0.0001 * i as f64).collect();
    let discrepancy = |s: &str| {
        let (r, r2) = (rule(s, 5), rule(s, 10));
        grid.iter()
            .map(|&v| {
                let th = Vector::from_element(1, v);
                let gs = loglik_gradient_sensitivity(m, &th, &ys, &r).unwrap();
                let gf = loglik_gradient_fisher(m, &th, &ys, &r, &r2).unwrap();
                (gs[0] - gf[0]).abs()
            })
            .fold(0.0, f64::max)
    };
    let (d3, d5) = (discrepancy("sym3"), discrepancy("sym5"));
    outcome(d5 < d3, format!("max |Fisher − sensitivity| sym3 {d3:.3}, sym5 {d5:.3}"))
}

fn criterion_6() -> Outcome {
    let cfg = load("linear_em.json");
    let model = cfg.model().unwrap();
    let data = experiments::datasets(&cfg, &model).unwrap();
    let ys = &data[0].measurements;
    let (r, r2) = (rule("sym3", 3), rule("sym3", 6));
    let sigma_cli::Model::Linear(lin) = &model else { unreachable!() };
    let trace = em_iterate(lin, &cfg.start_theta(&model).unwrap(), ys, &r, &r2, 30, &OptimizerConfig::default()).unwrap();
    // Exact likelihood from the independent Kalman oracle.
    let exact: Vec<f64> = trace
        .thetas
        .iter()
        .map(|th| {
            let p = lin.matrices(th);
            kalman(&p.a, &p.h, &p.q, &p.r, &p.m0, &p.p0, ys).loglik
        })
        .collect();
    let worst_drop = exact.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let monotone = worst_drop <= 1e-10;

    let m = Ungm::default().with_free(vec![UngmParam::A, UngmParam::B, UngmParam::C, UngmParam::Q, UngmParam::R]);
    let th = m.theta();
    let uys = simulate(&m, &th, 80, 5, 0).measurements;
    let (g, g2) = (rule("gh(7)", 1), rule("gh(7)", 2));
    let f = filter_pass(&m, &th, &uys, &g).unwrap();
    let s = rts_pass(&f, &m, &th, &g).unwrap();
    let stats = em_statistics(&s, &uys, &m, &g, &g2).unwrap();
    let closed = m.to_theta(&m_step_closed_form(&stats, &LinearInParams::free(&m), &m.params(&th)).unwrap(), &th);
    let qf = QFunction::new(&s, &uys, &g, &g2).unwrap();
    let opt = OptimizerConfig { gradient_tolerance: 1e-9, ..Default::default() };
    let numeric = minimize(Objective::new(|t: &Vector| qf.value_and_grad(&m, t).map(|(v, gr)| (-v, -gr)), opt.transforms_for(&m)), &th, &opt, || 0)
        .unwrap()
        .theta;
    let gap = (0..th.len()).map(|i| (closed[i] - numeric[i]).abs() / closed[i].abs().max(1.0)).fold(0.0, f64::max);
    outcome(
        monotone && gap < 1e-5,
        format!("largest log-likelihood decrease {worst_drop:.1e} over 30 iterations; closed-form vs numeric M-step {gap:.1e}"),
    )
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

fn criterion_7() -> Outcome {
    let a = experiments::likelihood_grid(&load("ungm_a_grid.json")).unwrap().tables.remove(0).1;
    let values = a.floats("value").unwrap();
    let (i3, ipf) = (argmax(&a.floats("sym3").unwrap()), argmax(&a.floats("pf").unwrap()));
    let same_cell = i3 == ipf;
    let mut detail = format!("a-grid argmax sym3 {:.4}, PF {:.4}", values[i3], values[ipf]);
    let mut ordered = true;
    for (name, file) in [("b", "ungm_b_grid.json"), ("c", "ungm_c_grid.json")] {
        let t = experiments::likelihood_grid(&load(file)).unwrap().tables.remove(0).1;
        let v = t.floats("value").unwrap();
        let best = |col: &str| v[argmax(&t.floats(col).unwrap())];
        let reference = best("gh(16)");
        let dev: BTreeMap<&str, f64> = ["sym3", "sym5", "sym7", "sym9"].into_iter().map(|s| (s, (best(s) - reference).abs())).collect();
        ordered &= ["sym5", "sym7", "sym9"].iter().all(|s| dev[s] <= dev["sym3"]);
        detail += &format!("; {name}-grid |argmax − gh(16)| {}", dev.iter().map(|(k, d)| format!("{k} {d:.4}")).collect::<Vec<_>>().join(", "));
    }
    outcome(same_cell && ordered, detail)
}

fn criterion_8() -> Outcome {
    let cfg = load("ct_mle.json");
    let out = experiments::mle(&cfg).unwrap();
    let est = out.table("estimates.csv").unwrap();
    let col = |name: &str| est.column(name).unwrap();
    let theta_of = |rule: &str| -> Vec<f64> { est.rows.iter().filter(|r| r[col("rule")] == rule).map(|r| r[col("theta1")].parse().unwrap()).collect() };
    let (s5, g3) = (theta_of("sym5"), theta_of("gh(3)"));
    let agree = s5.iter().zip(&g3).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let part_i = s5.len() == 20 && g3.len() == 20 && agree < 1e-6;

    let summary = out.table("mle_summary.csv").unwrap();
    let med: BTreeMap<String, f64> = summary
        .rows
        .iter()
        .map(|r| (r[summary.column("rule").unwrap()].clone(), r[summary.column("median_abs_dev1").unwrap()].parse().unwrap()))
        .collect();
    let part_ii = med["ekf"] >= med["sym3"] && med["sym3"] >= med["sym7"];
    let failed: usize = summary.floats("failed").unwrap().iter().sum::<f64>() as usize;

    let em = experiments::em(&load("ct_em.json")).unwrap();
    let trace = em.table("em_trace.csv").unwrap();
    let at10: Vec<f64> = trace.rows.iter().filter(|r| r[trace.column("iteration").unwrap()] == "10").map(|r| r[trace.column("theta1").unwrap()].parse().unwrap()).collect();
    let spread = at10.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - at10.iter().cloned().fold(f64::INFINITY, f64::min);
    let part_iii = at10.len() == 3 && spread < 1e-3;

    let verdict = |b: bool| if b { "ok" } else { "not met" };
    outcome(
        part_i && part_ii && part_iii && failed == 0,
        format!(
            "(i) max |sym5 − gh(3)| {agree:.1e} {}; (ii) median |MLE − gh(5)| ekf {:.2e}, sym3 {:.2e}, sym7 {:.2e} {}; (iii) EM spread at iteration 10 {spread:.1e} {}; {failed} failed runs",
            verdict(part_i),
            med["ekf"],
            med["sym3"],
            med["sym7"],
            verdict(part_ii),
            verdict(part_iii)
        ),
    )
}

fn criterion_9() -> Outcome {
    let s5 = build_rule(&Scheme::SYM5, 5).unwrap();
    let g3 = build_rule(&Scheme::GaussHermite(3), 5).unwrap();
    let w = g3.weights(WeightKind::Mean);
    let mut mass = 0.0;
    let mut missing = 0;
    for i in 0..s5.len() {
        match (0..g3.len()).find(|&j| (s5.point(i) - g3.point(j)).amax() < 1e-12) {
            Some(j) => mass += w[j],
            None => missing += 1,
        }
    }
    outcome(missing == 0 && (mass - 0.79).abs() <= 0.005, format!("{} of {} sym5 points in gh(3), shared weight mass {mass:.4}", s5.len() - missing, s5.len()))
}

fn criterion_10() -> Outcome {
    let model = LinearGaussian::new(
        Matrix::from_element(1, 1, 0.9),
        Matrix::from_element(1, 1, 1.0),
        Matrix::from_element(1, 1, 0.5),
        Matrix::from_element(1, 1, 1.0),
        Vector::zeros(1),
        Matrix::from_element(1, 1, 1.0),
        vec![LinearParam::QScale],
    );
    let th = model.theta();
    let ys = simulate(&model, &th, 50, 8, 0).measurements;
    let p = model.matrices(&th);
    let exact = kalman(&p.a, &p.h, &p.q, &p.r, &p.m0, &p.p0, &ys).loglik;
    let ratios: Vec<f64> = (0..100).map(|seed| (pf_loglik(&model, &th, &ys, 10_000, seed, Proposal::Bootstrap).unwrap() - exact).exp()).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    outcome((0.8..=1.2).contains(&mean), format!("mean likelihood ratio over 100 seeds {mean:.4}"))
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_sigma")).args(args).status().expect("binary runs");
    assert!(status.success(), "sigma {args:?} failed");
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let sim = r#"{"model": {"kind": "ungm", "free": ["r"]}, "steps": 40, "trajectories": 3, "seed": 5}"#;
    let mle = r#"{"model": {"kind": "ungm", "free": ["r"]}, "steps": 40, "trajectories": 3, "seed": 5, "data": "sim",
                  "rules": ["sym3", "gh(5)", "ekf"], "reference_rule": "gh(5)", "theta0": [0.05]}"#;
    let em = r#"{"model": {"kind": "ungm", "free": ["q"]}, "steps": 40, "trajectories": 2, "seed": 5, "data": "sim",
                 "rules": ["sym3", "sym5"], "theta0": [4], "em_iterations": 5}"#;
    for (name, text) in [("sim.json", sim), ("mle.json", mle), ("em.json", em)] {
        std::fs::write(dir.path().join(name), text).unwrap();
    }
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let mut runs = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "2")] {
        run_cli(&["simulate", "--config", &d("sim.json"), "--out", &d("sim")]);
        let sim_files = csv_files(&dir.path().join("sim"));
        run_cli(&["mle", "--config", &d("mle.json"), "--out", &d(&format!("mle_{run}")), "--threads", threads]);
        run_cli(&["em", "--config", &d("em.json"), "--out", &d(&format!("em_{run}")), "--threads", threads]);
        runs.push((sim_files, csv_files(&dir.path().join(format!("mle_{run}"))), csv_files(&dir.path().join(format!("em_{run}")))));
    }
    let files = runs[0].0.len() + runs[0].1.len() + runs[0].2.len();
    let identical = runs[0] == runs[1] && runs[0].1.len() == 3 && runs[0].2.len() == 2;
    outcome(identical, format!("{files} output files byte-identical across reruns with 1 and 2 threads: {identical}"))
}

fn main() {
    let criteria: [(u32, &str, f64, fn() -> Outcome); 11] = [
        (1, "cubature exactness", 10.0, criterion_1),
        (2, "point-count table", f64::INFINITY, criterion_2),
        (3, "Kalman equivalence", f64::INFINITY, criterion_3),
        (4, "gradient checks", f64::INFINITY, criterion_4),
        (5, "Fisher-vs-sensitivity ordering", 120.0, criterion_5),
        (6, "EM monotonicity and M-step optimality", f64::INFINITY, criterion_6),
        (7, "UNGM likelihood study", 300.0, criterion_7),
        (8, "coordinated-turn estimation study", 900.0, criterion_8),
        (9, "subset property", f64::INFINITY, criterion_9),
        (10, "particle filter sanity", f64::INFINITY, criterion_10),
        (11, "determinism", f64::INFINITY, criterion_11),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    let stdout = std::io::stdout();
    for (id, name, limit, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let pass = o.pass && secs < limit;
        let timing = if limit.is_finite() { format!("{secs:.1} s, limit {limit:.0} s") } else { format!("{secs:.1} s") };
        let known = if !pass && KNOWN_FAILURES.contains(&id) { " [known failure, see decisions ledger]" } else { "" };
        writeln!(stdout.lock(), "criterion {id:>2} {}: {name}: {} [{timing}]{known}", if pass { "PASS" } else { "FAIL" }, o.detail).unwrap();
        if !pass && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance failures: {unexpected:?}");
        std::process::exit(1);
    }
}
