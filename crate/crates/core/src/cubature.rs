//! Unit sigma-point sets for Gaussian integrals.
//!
//! A [`CubatureRule`] approximates `E[g(x)]` for `x ~ N(m, LLᵀ)` by
//! `Σ wᵢ g(m + L ξᵢ)`. Rules are built for the unscented transform, the fully
//! symmetric rules of degree 3, 5, 7 and 9, and tensor-product Gauss–Hermite.
//!
//! The weights of the fully symmetric rules are not tabulated: the generator
//! radii are fixed and the per-orbit weights are found by matching every even
//! moment of `N(0, I)` up to the target degree.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DVectorView, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Polynomial degree of a fully symmetric rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymmetricOrder {
    Three,
    Five,
    Seven,
    Nine,
}

impl SymmetricOrder {
    pub fn degree(self) -> usize {
        match self {
            SymmetricOrder::Three => 3,
            SymmetricOrder::Five => 5,
            SymmetricOrder::Seven => 7,
            SymmetricOrder::Nine => 9,
        }
    }

    pub fn from_degree(p: usize) -> Result<Self> {
        match p {
            3 => Ok(SymmetricOrder::Three),
            5 => Ok(SymmetricOrder::Five),
            7 => Ok(SymmetricOrder::Seven),
            9 => Ok(SymmetricOrder::Nine),
            _ => Err(Error::InvalidScheme(format!("symmetric order {p} is not one of 3, 5, 7, 9"))),
        }
    }
}

/// Which sigma-point scheme to build.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Unscented { alpha: f64, beta: f64, kappa: f64 },
    Symmetric(SymmetricOrder),
    /// Tensor product of the `p`-point one-dimensional Gauss–Hermite rule.
    GaussHermite(usize),
}

impl Scheme {
    pub const SYM3: Scheme = Scheme::Symmetric(SymmetricOrder::Three);
    pub const SYM5: Scheme = Scheme::Symmetric(SymmetricOrder::Five);
    pub const SYM7: Scheme = Scheme::Symmetric(SymmetricOrder::Seven);
    pub const SYM9: Scheme = Scheme::Symmetric(SymmetricOrder::Nine);

    pub fn unscented_default() -> Self {
        Scheme::Unscented { alpha: 1.0, beta: 0.0, kappa: 0.0 }
    }

    /// Highest total polynomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        match *self {
            Scheme::Unscented { .. } => 3,
            Scheme::Symmetric(o) => o.degree(),
            Scheme::GaussHermite(p) => 2 * p - 1,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidScheme("dimension must be at least 1".into()));
        }
        match *self {
            Scheme::Unscented { alpha, beta, kappa } => {
                if !(alpha.is_finite() && beta.is_finite() && kappa.is_finite()) {
                    return Err(Error::InvalidScheme("non-finite unscented parameters".into()));
                }
                let spread = alpha * alpha * (n as f64 + kappa);
                if spread <= 0.0 {
                    return Err(Error::InvalidScheme(format!(
                        "unscented transform with n + lambda = {spread} (must be positive)"
                    )));
                }
                Ok(())
            }
            Scheme::Symmetric(_) => Ok(()),
            Scheme::GaussHermite(p) => {
                if p == 0 {
                    Err(Error::InvalidScheme("Gauss-Hermite order must be positive".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Unscented { alpha, beta, kappa } => write!(f, "ut({alpha},{beta},{kappa})"),
            Scheme::Symmetric(o) => write!(f, "sym{}", o.degree()),
            Scheme::GaussHermite(p) => write!(f, "gh({p})"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// Parses `ut(alpha,beta,kappa)`, `ut`, `sym3`, `sym5`, `sym7`, `sym9`, `gh(p)`.
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
        let bad = || Error::InvalidScheme(format!("cannot parse rule spec '{s}'"));
        if let Some(deg) = t.strip_prefix("sym") {
            let p: usize = deg.parse().map_err(|_| bad())?;
            return Ok(Scheme::Symmetric(SymmetricOrder::from_degree(p)?));
        }
        if t == "ut" {
            return Ok(Scheme::unscented_default());
        }
        let args = |prefix: &str| -> Option<Vec<&str>> {
            let inner = t.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
            Some(inner.split(',').collect())
        };
        if let Some(a) = args("ut") {
            if a.len() != 3 {
                return Err(bad());
            }
            let v: Vec<f64> = a.iter().map(|x| x.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
            return Ok(Scheme::Unscented { alpha: v[0], beta: v[1], kappa: v[2] });
        }
        if let Some(a) = args("gh") {
            if a.len() != 1 {
                return Err(bad());
            }
            let p: usize = a[0].parse().map_err(|_| bad())?;
            if p == 0 {
                return Err(Error::InvalidScheme("Gauss-Hermite order must be positive".into()));
            }
            return Ok(Scheme::GaussHermite(p));
        }
        Err(bad())
    }
}

/// Selects the mean or the covariance weight set (they differ only for the UT).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Mean,
    Covariance,
}

/// Unit sigma-points `ξᵢ` (columns of `points`) with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CubatureRule {
    pub scheme: Scheme,
    pub dim: usize,
    /// `dim × N`; column `i` is `ξᵢ`.
    pub points: Matrix,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl CubatureRule {
    pub fn len(&self) -> usize {
        self.mean_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_weights.is_empty()
    }

    pub fn point(&self, i: usize) -> DVectorView<'_, f64> {
        self.points.column(i)
    }

    pub fn weights(&self, kind: WeightKind) -> &[f64] {
        match kind {
            WeightKind::Mean => &self.mean_weights,
            WeightKind::Covariance => &self.cov_weights,
        }
    }

    pub fn degree(&self) -> usize {
        self.scheme.degree()
    }

    /// Sigma-points `m + L ξᵢ` as columns.
    pub fn place(&self, m: &Vector, l: &Matrix) -> Result<Matrix> {
        if m.len() != self.dim || l.nrows() != self.dim || l.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "rule of dimension {} placed with mean {} and factor {}x{}",
                self.dim,
                m.len(),
                l.nrows(),
                l.ncols()
            )));
        }
        let mut x = l * &self.points;
        for mut c in x.column_iter_mut() {
            c += m;
        }
        Ok(x)
    }
}

/// One fully symmetric orbit: all sign changes and coordinate permutations of
/// `generator` padded with zeros. `weight` is the weight of each point.
#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub generator: Vec<f64>,
    pub weight: f64,
}

/// Generators and per-point weights of a fully symmetric rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricWeights {
    pub dim: usize,
    pub order: SymmetricOrder,
    pub orbits: Vec<Orbit>,
}

fn generators(n: usize, order: SymmetricOrder) -> Vec<Vec<f64>> {
    match order {
        SymmetricOrder::Three => vec![vec![(n as f64).sqrt()]],
        SymmetricOrder::Five => {
            let u = 3f64.sqrt();
            vec![vec![], vec![u], vec![u, u]]
        }
        SymmetricOrder::Seven => {
            // Positive roots of t² − 6t + 3 = 0, t = u².
            let outer = (3.0 + 6f64.sqrt()).sqrt();
            let inner = (3.0 - 6f64.sqrt()).sqrt();
            vec![vec![], vec![outer], vec![inner], vec![outer, outer], vec![inner, inner], vec![outer, outer, outer]]
        }
        SymmetricOrder::Nine => {
            // Positive roots of t² − 10t + 15 = 0.
            let outer = (5.0 + 10f64.sqrt()).sqrt();
            let inner = (5.0 - 10f64.sqrt()).sqrt();
            vec![
                vec![],
                vec![outer],
                vec![inner],
                vec![outer, outer],
                vec![inner, inner],
                vec![outer, inner],
                vec![outer, outer, outer],
                vec![inner, inner, inner],
                vec![outer, outer, outer, outer],
            ]
        }
    }
}

/// In-place lexicographic next permutation; false once the last one is reached.
fn next_permutation(v: &mut [f64]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// All points of the orbit of `generator` in `n` dimensions (empty if the
/// generator has more non-zero entries than `n`).
pub(crate) fn orbit_points(generator: &[f64], n: usize) -> Vec<Vec<f64>> {
    if generator.len() > n {
        return Vec::new();
    }
    let mut base = vec![0.0; n];
    base[..generator.len()].copy_from_slice(generator);
    base.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::new();
    loop {
        let nz: Vec<usize> = (0..n).filter(|&i| base[i] != 0.0).collect();
        for mask in 0..(1usize << nz.len()) {
            let mut p = base.clone();
            for (bit, &i) in nz.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    p[i] = -p[i];
                }
            }
            out.push(p);
        }
        if !next_permutation(&mut base) {
            break;
        }
    }
    out
}

/// Integer partitions of `total` into at most `max_parts` parts, non-increasing.
fn partitions(total: usize, max_parts: usize) -> Vec<Vec<usize>> {
    fn go(total: usize, max_parts: usize, max_val: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if total == 0 {
            out.push(cur.clone());
            return;
        }
        if max_parts == 0 {
            return;
        }
        for v in (1..=total.min(max_val)).rev() {
            cur.push(v);
            go(total - v, max_parts - 1, v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(total, max_parts, total, &mut Vec::new(), &mut out);
    out
}

fn double_factorial_odd(k: usize) -> f64 {
    // (2k − 1)!!
    (1..=k).map(|i| (2 * i - 1) as f64).product()
}

/// Per-orbit weights of the fully symmetric rule of the given order, found by
/// matching `E[x₁^{2a₁}⋯x_n^{2a_n}]` for every `Σ 2aᵢ ≤ order`.
pub fn solve_symmetric_weights(n: usize, order: SymmetricOrder) -> Result<SymmetricWeights> {
    if n == 0 {
        return Err(Error::InvalidScheme("dimension must be at least 1".into()));
    }
    let gens: Vec<Vec<f64>> = generators(n, order).into_iter().filter(|g| g.len() <= n).collect();
    let orbits: Vec<Vec<Vec<f64>>> = gens.iter().map(|g| orbit_points(g, n)).collect();

    let mut rows: Vec<Vec<usize>> = Vec::new();
    for half in 0..=order.degree() / 2 {
        rows.extend(partitions(half, n));
    }
    let mut a = Matrix::zeros(rows.len(), gens.len());
    let mut b = Vector::zeros(rows.len());
    for (r, alpha) in rows.iter().enumerate() {
        b[r] = alpha.iter().map(|&k| double_factorial_odd(k)).product();
        for (c, pts) in orbits.iter().enumerate() {
            a[(r, c)] = pts
                .iter()
                .map(|p| alpha.iter().enumerate().map(|(j, &k)| p[j].powi(2 * k as i32)).product::<f64>())
                .sum();
        }
    }

    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= smax * 1e-13 {
        return Err(Error::SingularMomentSystem { order: order.degree(), dim: n, residual: f64::NAN });
    }
    let w = svd
        .solve(&b, 0.0)
        .map_err(|_| Error::SingularMomentSystem { order: order.degree(), dim: n, residual: f64::NAN })?;
    let residual = (&a * &w - &b).amax();
    if residual > 1e-9 * b.amax().max(1.0) {
        return Err(Error::SingularMomentSystem { order: order.degree(), dim: n, residual });
    }
    Ok(SymmetricWeights {
        dim: n,
        order,
        orbits: gens.into_iter().zip(w.iter()).map(|(generator, &weight)| Orbit { generator, weight }).collect(),
    })
}

/// Nodes and weights of the `p`-point Gauss–Hermite rule for `N(0, 1)`,
/// via the eigen-decomposition of the Jacobi matrix of the probabilists'
/// Hermite polynomials. Nodes are ascending and exactly antisymmetric.
pub fn gauss_hermite_1d(p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = Matrix::zeros(p, p);
    for k in 1..p {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..p)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut nodes: Vec<f64> = pairs.iter().map(|x| x.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|x| x.1).collect();
    for i in 0..p / 2 {
        let k = p - 1 - i;
        let x = 0.5 * (nodes[k] - nodes[i]);
        let w = 0.5 * (weights[k] + weights[i]);
        nodes[i] = -x;
        nodes[k] = x;
        weights[i] = w;
        weights[k] = w;
    }
    if p % 2 == 1 {
        nodes[p / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// Number of sigma-points of a scheme in `n` dimensions.
pub fn point_count(scheme: &Scheme, n: usize) -> Result<usize> {
    scheme.validate(n)?;
    Ok(match *scheme {
        Scheme::Unscented { .. } => 2 * n + 1,
        Scheme::Symmetric(SymmetricOrder::Three) => 2 * n,
        Scheme::Symmetric(SymmetricOrder::Five) => 2 * n * n + 1,
        Scheme::Symmetric(SymmetricOrder::Seven) => (4 * n * n * n + 8 * n + 3) / 3,
        Scheme::Symmetric(SymmetricOrder::Nine) => (2 * n.pow(4) + 22 * n * n + 3 - 4 * n.pow(3) - 8 * n) / 3,
        Scheme::GaussHermite(p) => p.pow(n as u32),
    })
}

/// Construct the unit sigma-points and weights of `scheme` in `n` dimensions.
pub fn build_rule(scheme: &Scheme, n: usize) -> Result<CubatureRule> {
    scheme.validate(n)?;
    let (pts, mean_weights, cov_weights): (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) = match *scheme {
        Scheme::Unscented { alpha, beta, kappa } => {
            let nf = n as f64;
            let lambda = alpha * alpha * (nf + kappa) - nf;
            let r = (nf + lambda).sqrt();
            let mut pts = vec![vec![0.0; n]];
            for sign in [1.0, -1.0] {
                for i in 0..n {
                    let mut p = vec![0.0; n];
                    p[i] = sign * r;
                    pts.push(p);
                }
            }
            let wi = 1.0 / (2.0 * (nf + lambda));
            let w0 = lambda / (nf + lambda);
            let mut wm = vec![wi; 2 * n + 1];
            wm[0] = w0;
            let mut wc = wm.clone();
            wc[0] = w0 + (1.0 - alpha * alpha + beta);
            (pts, wm, wc)
        }
        Scheme::Symmetric(order) => {
            let sw = solve_symmetric_weights(n, order)?;
            let mut pts = Vec::new();
            let mut w = Vec::new();
            for orbit in &sw.orbits {
                for p in orbit_points(&orbit.generator, n) {
                    pts.push(p);
                    w.push(orbit.weight);
                }
            }
            (pts, w.clone(), w)
        }
        Scheme::GaussHermite(p) => {
            let (nodes, w1) = gauss_hermite_1d(p);
            let total = p.pow(n as u32);
            let mut pts = Vec::with_capacity(total);
            let mut w = Vec::with_capacity(total);
            let mut idx = vec![0usize; n];
            for _ in 0..total {
                pts.push(idx.iter().map(|&i| nodes[i]).collect());
                w.push(idx.iter().map(|&i| w1[i]).product());
                for d in (0..n).rev() {
                    idx[d] += 1;
                    if idx[d] < p {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            (pts, w.clone(), w)
        }
    };
    let npts = pts.len();
    let points = Matrix::from_fn(n, npts, |r, c| pts[c][r]);
    Ok(CubatureRule { scheme: *scheme, dim: n, points, mean_weights, cov_weights })
}

fn rule_cache() -> &'static Mutex<HashMap<String, Arc<CubatureRule>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<CubatureRule>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Memoized [`build_rule`]; rules are immutable and shared.
pub fn cached_rule(scheme: &Scheme, n: usize) -> Result<Arc<CubatureRule>> {
    let key = format!("{scheme}@{n}");
    if let Some(r) = rule_cache().lock().unwrap().get(&key) {
        return Ok(r.clone());
    }
    let rule = Arc::new(build_rule(scheme, n)?);
    rule_cache().lock().unwrap().entry(key).or_insert_with(|| rule.clone());
    Ok(rule)
}

/// `Σ wᵢ g(m + L ξᵢ)` with the mean weights.
pub fn expect<G>(rule: &CubatureRule, m: &Vector, l: &Matrix, g: G) -> Result<Vector>
where
    G: FnMut(&Vector) -> Vector,
{
    expect_with(rule, m, l, WeightKind::Mean, g)
}

/// As [`expect`], selecting the weight set.
pub fn expect_with<G>(rule: &CubatureRule, m: &Vector, l: &Matrix, kind: WeightKind, mut g: G) -> Result<Vector>
where
    G: FnMut(&Vector) -> Vector,
{
    let x = rule.place(m, l)?;
    let w = rule.weights(kind);
    let mut acc: Option<Vector> = None;
    for (i, &wi) in w.iter().enumerate() {
        let gi = g(&x.column(i).into_owned());
        match acc.as_mut() {
            None => acc = Some(gi * wi),
            Some(a) => {
                if a.len() != gi.len() {
                    return Err(Error::DimensionMismatch("integrand output length varies".into()));
                }
                a.axpy(wi, &gi, 1.0);
            }
        }
    }
    Ok(acc.unwrap_or_else(|| Vector::zeros(0)))
}
