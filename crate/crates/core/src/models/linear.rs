use crate::linalg::{Matrix, Vector};

use super::{CovFree, FreeBlocks, LinearInParams, LinearParams, StateSpaceModel};

/// A scalar entry of the linear-Gaussian model exposed as a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearParam {
    A(usize, usize),
    H(usize, usize),
    /// `Q = θ · Q_base`.
    QScale,
    /// `R = θ · R_base`.
    RScale,
    /// Symmetric entry `Q_ij = Q_ji = θ`.
    Q(usize, usize),
    R(usize, usize),
    M0(usize),
    P0(usize, usize),
}

/// `x_k = A x_{k−1} + q`, `y_k = H x_k + r`, with any subset of entries free.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    pub a: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub m0: Vector,
    pub p0: Matrix,
    pub free: Vec<LinearParam>,
}

fn sym_unit(n: usize, i: usize, j: usize) -> Matrix {
    let mut e = Matrix::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

impl LinearGaussian {
    pub fn new(a: Matrix, h: Matrix, q: Matrix, r: Matrix, m0: Vector, p0: Matrix, free: Vec<LinearParam>) -> Self {
        LinearGaussian { a, h, q, r, m0, p0, free }
    }

    /// Parameter vector reproducing the stored matrices.
    pub fn theta(&self) -> Vector {
        Vector::from_iterator(
            self.free.len(),
            self.free.iter().map(|p| match *p {
                LinearParam::A(i, j) => self.a[(i, j)],
                LinearParam::H(i, j) => self.h[(i, j)],
                LinearParam::QScale | LinearParam::RScale => 1.0,
                LinearParam::Q(i, j) => self.q[(i, j)],
                LinearParam::R(i, j) => self.r[(i, j)],
                LinearParam::M0(i) => self.m0[i],
                LinearParam::P0(i, j) => self.p0[(i, j)],
            }),
        )
    }

    pub fn matrices(&self, theta: &Vector) -> LinearParams {
        let mut p = LinearParams {
            a: self.a.clone(),
            h: self.h.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
            m0: self.m0.clone(),
            p0: self.p0.clone(),
        };
        for (k, par) in self.free.iter().enumerate() {
            let v = theta[k];
            match *par {
                LinearParam::A(i, j) => p.a[(i, j)] = v,
                LinearParam::H(i, j) => p.h[(i, j)] = v,
                LinearParam::QScale => p.q = &self.q * v,
                LinearParam::RScale => p.r = &self.r * v,
                LinearParam::Q(i, j) => {
                    p.q[(i, j)] = v;
                    p.q[(j, i)] = v;
                }
                LinearParam::R(i, j) => {
                    p.r[(i, j)] = v;
                    p.r[(j, i)] = v;
                }
                LinearParam::M0(i) => p.m0[i] = v,
                LinearParam::P0(i, j) => {
                    p.p0[(i, j)] = v;
                    p.p0[(j, i)] = v;
                }
            }
        }
        p
    }

    fn has(&self, p: LinearParam) -> bool {
        self.free.contains(&p)
    }

    fn cov_free(&self, n: usize, base: &Matrix, scale: LinearParam, entry: fn(usize, usize) -> LinearParam) -> CovFree {
        if self.has(scale) {
            return CovFree::Scale;
        }
        let all = (0..n).all(|i| (i..n).all(|j| self.has(entry(i, j)) || self.has(entry(j, i))));
        if all {
            return CovFree::Full;
        }
        let diag: Vec<usize> = (0..n).filter(|&i| self.has(entry(i, i))).collect();
        let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || base[(i, j)] == 0.0));
        if !diag.is_empty() && is_diag {
            CovFree::Diagonal(diag)
        } else {
            CovFree::Fixed
        }
    }
}

impl StateSpaceModel for LinearGaussian {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn meas_dim(&self) -> usize {
        self.h.nrows()
    }
    fn param_dim(&self) -> usize {
        self.free.len()
    }
    fn transition(&self, x: &Vector, _k: usize, theta: &Vector) -> Vector {
        self.matrices(theta).a * x
    }
    fn measurement(&self, x: &Vector, theta: &Vector) -> Vector {
        self.matrices(theta).h * x
    }
    fn process_cov(&self, theta: &Vector) -> Matrix {
        self.matrices(theta).q
    }
    fn measurement_cov(&self, theta: &Vector) -> Matrix {
        self.matrices(theta).r
    }
    fn initial_mean(&self, theta: &Vector) -> Vector {
        self.matrices(theta).m0
    }
    fn initial_cov(&self, theta: &Vector) -> Matrix {
        self.matrices(theta).p0
    }
    fn transition_jacobian(&self, _x: &Vector, _k: usize, theta: &Vector) -> Matrix {
        self.matrices(theta).a
    }
    fn measurement_jacobian(&self, _x: &Vector, theta: &Vector) -> Matrix {
        self.matrices(theta).h
    }
    fn transition_param_jacobian(&self, x: &Vector, _k: usize, _theta: &Vector) -> Matrix {
        let mut j = Matrix::zeros(self.state_dim(), self.free.len());
        for (c, p) in self.free.iter().enumerate() {
            if let LinearParam::A(r, s) = *p {
                j[(r, c)] = x[s];
            }
        }
        j
    }
    fn measurement_param_jacobian(&self, x: &Vector, _theta: &Vector) -> Matrix {
        let mut j = Matrix::zeros(self.meas_dim(), self.free.len());
        for (c, p) in self.free.iter().enumerate() {
            if let LinearParam::H(r, s) = *p {
                j[(r, c)] = x[s];
            }
        }
        j
    }
    fn process_cov_derivatives(&self, _theta: &Vector) -> Vec<Matrix> {
        let n = self.state_dim();
        self.free
            .iter()
            .map(|p| match *p {
                LinearParam::QScale => self.q.clone(),
                LinearParam::Q(i, j) => sym_unit(n, i, j),
                _ => Matrix::zeros(n, n),
            })
            .collect()
    }
    fn measurement_cov_derivatives(&self, _theta: &Vector) -> Vec<Matrix> {
        let d = self.meas_dim();
        self.free
            .iter()
            .map(|p| match *p {
                LinearParam::RScale => self.r.clone(),
                LinearParam::R(i, j) => sym_unit(d, i, j),
                _ => Matrix::zeros(d, d),
            })
            .collect()
    }
    fn initial_mean_jacobian(&self, _theta: &Vector) -> Matrix {
        let mut j = Matrix::zeros(self.state_dim(), self.free.len());
        for (c, p) in self.free.iter().enumerate() {
            if let LinearParam::M0(i) = *p {
                j[(i, c)] = 1.0;
            }
        }
        j
    }
    fn initial_cov_derivatives(&self, _theta: &Vector) -> Vec<Matrix> {
        let n = self.state_dim();
        self.free
            .iter()
            .map(|p| match *p {
                LinearParam::P0(i, j) => sym_unit(n, i, j),
                _ => Matrix::zeros(n, n),
            })
            .collect()
    }
    fn linear_measurement(&self, theta: &Vector) -> Option<Matrix> {
        Some(self.matrices(theta).h)
    }
    fn linear_form(&self) -> Option<&dyn LinearInParams> {
        Some(self)
    }
    fn param_is_positive(&self, i: usize) -> bool {
        match self.free[i] {
            LinearParam::QScale | LinearParam::RScale => true,
            LinearParam::Q(a, b) | LinearParam::R(a, b) | LinearParam::P0(a, b) => a == b,
            _ => false,
        }
    }
}

impl LinearInParams for LinearGaussian {
    fn basis_f(&self, x: &Vector, _k: usize) -> Vector {
        x.clone()
    }
    fn basis_h(&self, x: &Vector) -> Vector {
        x.clone()
    }
    fn params(&self, theta: &Vector) -> LinearParams {
        self.matrices(theta)
    }
    fn free(&self) -> FreeBlocks {
        let n = self.state_dim();
        let d = self.meas_dim();
        FreeBlocks {
            a: (0..n).all(|i| (0..n).all(|j| self.has(LinearParam::A(i, j)))),
            h: (0..d).all(|i| (0..n).all(|j| self.has(LinearParam::H(i, j)))),
            q: self.cov_free(n, &self.q, LinearParam::QScale, LinearParam::Q),
            r: self.cov_free(d, &self.r, LinearParam::RScale, LinearParam::R),
            m0: (0..n).all(|i| self.has(LinearParam::M0(i))),
            p0: (0..n).all(|i| (i..n).all(|j| self.has(LinearParam::P0(i, j)) || self.has(LinearParam::P0(j, i)))),
        }
    }
    fn closed_form_covers(&self) -> bool {
        let free = LinearInParams::free(self);
        let cov = |f: &CovFree, scale: bool, i: usize, j: usize| match f {
            CovFree::Fixed => false,
            CovFree::Full => !scale,
            CovFree::Scale => scale,
            CovFree::Diagonal(_) => !scale && i == j,
        };
        self.free.iter().all(|p| match *p {
            LinearParam::A(..) => free.a,
            LinearParam::H(..) => free.h,
            LinearParam::QScale => cov(&free.q, true, 0, 0),
            LinearParam::RScale => cov(&free.r, true, 0, 0),
            LinearParam::Q(i, j) => cov(&free.q, false, i, j),
            LinearParam::R(i, j) => cov(&free.r, false, i, j),
            LinearParam::M0(_) => free.m0,
            LinearParam::P0(..) => free.p0,
        })
    }
    fn to_theta(&self, p: &LinearParams, theta: &Vector) -> Vector {
        let free = LinearInParams::free(self);
        let mut out = theta.clone();
        for (k, par) in self.free.iter().enumerate() {
            out[k] = match *par {
                LinearParam::A(i, j) if free.a => p.a[(i, j)],
                LinearParam::H(i, j) if free.h => p.h[(i, j)],
                // Scale blocks are written back as the scale itself.
                LinearParam::QScale if free.q == CovFree::Scale => p.q[(0, 0)] / self.q[(0, 0)],
                LinearParam::RScale if free.r == CovFree::Scale => p.r[(0, 0)] / self.r[(0, 0)],
                LinearParam::Q(i, j) if free.q != CovFree::Fixed => p.q[(i, j)],
                LinearParam::R(i, j) if free.r != CovFree::Fixed => p.r[(i, j)],
                LinearParam::M0(i) if free.m0 => p.m0[i],
                LinearParam::P0(i, j) if free.p0 => p.p0[(i, j)],
                _ => theta[k],
            };
        }
        out
    }
}
