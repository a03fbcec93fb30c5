//! Dense linear-algebra helpers shared by the filters and estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative jitter levels tried, in order, when a covariance fails to factorize.
const JITTER_START: f64 = 1e-12;
const JITTER_STOP: f64 = 1e-6;

/// `(P + Pᵀ) / 2`.
pub fn symmetrize(p: &Matrix) -> Matrix {
    (p + p.transpose()) * 0.5
}

/// Lower Cholesky factor of `p`, retrying with `ε·tr(P)/n·I` for
/// ε = 1e-12, 1e-11, …, 1e-6 before giving up.
///
/// The all-zero matrix (a point mass) factorizes to the zero matrix.
pub fn cholesky_jittered(p: &Matrix) -> Result<Matrix> {
    let n = p.nrows();
    if n != p.ncols() {
        return Err(Error::DimensionMismatch(format!("covariance is {}x{}", n, p.ncols())));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::breakdown(None, "non-finite covariance"));
    }
    if let Some(ch) = Cholesky::new(p.clone()) {
        return Ok(ch.l());
    }
    if p.iter().all(|&v| v == 0.0) {
        return Ok(Matrix::zeros(n, n));
    }
    let scale = p.trace() / n as f64;
    if scale <= 0.0 {
        return Err(Error::breakdown(None, "covariance with non-positive trace"));
    }
    let mut eps = JITTER_START;
    while eps <= JITTER_STOP * 1.000_001 {
        let mut q = p.clone();
        for i in 0..n {
            q[(i, i)] += eps * scale;
        }
        if let Some(ch) = Cholesky::new(q) {
            return Ok(ch.l());
        }
        eps *= 10.0;
    }
    Err(Error::breakdown(None, "covariance not positive definite after jitter"))
}

/// Cholesky factorization of a matrix that must be positive definite
/// (innovation covariances, noise covariances), with the same jitter schedule.
pub fn spd_factor(p: &Matrix, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::breakdown(None, format!("{what}: non-finite entries")));
    }
    if let Some(ch) = Cholesky::new(p.clone()) {
        return Ok(ch);
    }
    let n = p.nrows();
    let scale = p.trace() / n as f64;
    if scale > 0.0 {
        let mut eps = JITTER_START;
        while eps <= JITTER_STOP * 1.000_001 {
            let mut q = p.clone();
            for i in 0..n {
                q[(i, i)] += eps * scale;
            }
            if let Some(ch) = Cholesky::new(q) {
                return Ok(ch);
            }
            eps *= 10.0;
        }
    }
    Err(Error::breakdown(None, format!("{what} is not positive definite")))
}

/// `log |A|` from a Cholesky factorization.
pub fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    let l = ch.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// `A⁻¹` for a symmetric positive definite `A`.
pub fn spd_inverse(p: &Matrix, what: &str) -> Result<Matrix> {
    Ok(spd_factor(p, what)?.inverse())
}

/// Forward-mode derivative of the lower Cholesky factor.
///
/// With `P = LLᵀ` and a symmetric perturbation `dP`, returns
/// `dL = L·Φ(L⁻¹ dP L⁻ᵀ)` where `Φ` keeps the strictly lower triangle and
/// halves the diagonal.
pub fn cholesky_derivative(l: &Matrix, dp: &Matrix) -> Matrix {
    let n = l.nrows();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    // A zero factor (point mass) has no well-defined derivative; treat it as flat.
    if (0..n).any(|i| l[(i, i)] == 0.0) {
        return Matrix::zeros(n, n);
    }
    let linv_dp = l.solve_lower_triangular(dp).expect("non-singular triangular factor");
    let inner = l
        .solve_lower_triangular(&linv_dp.transpose())
        .expect("non-singular triangular factor")
        .transpose();
    let mut phi = Matrix::zeros(n, n);
    for j in 0..n {
        phi[(j, j)] = 0.5 * inner[(j, j)];
        for i in (j + 1)..n {
            phi[(i, j)] = inner[(i, j)];
        }
    }
    l * phi
}

/// Solve `X S = B` for `X` given a factorization of symmetric `S`.
pub fn right_solve(ch: &Cholesky<f64, Dyn>, b: &Matrix) -> Matrix {
    ch.solve(&b.transpose()).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let a = Matrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        &a * a.transpose() + Matrix::identity(n, n) * 0.5
    }

    #[test]
    fn cholesky_derivative_matches_finite_difference() {
        let p = spd(4, 3);
        let dp = symmetrize(&spd(4, 9));
        let l = cholesky_jittered(&p).unwrap();
        let dl = cholesky_derivative(&l, &dp);
        let h = 1e-6;
        let lp = cholesky_jittered(&(&p + &dp * h)).unwrap();
        let lm = cholesky_jittered(&(&p - &dp * h)).unwrap();
        let fd = (lp - lm) / (2.0 * h);
        assert!((dl - fd).amax() < 1e-7);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let v = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let p = &v * v.transpose();
        let l = cholesky_jittered(&p).unwrap();
        assert!((&l * l.transpose() - &p).amax() < 1e-5);
    }

    #[test]
    fn indefinite_is_breakdown() {
        let p = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_jittered(&p), Err(Error::NumericalBreakdown { .. })));
    }

    #[test]
    fn zero_matrix_is_point_mass() {
        let l = cholesky_jittered(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(l, Matrix::zeros(3, 3));
    }
}
