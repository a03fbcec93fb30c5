use crate::linalg::{Matrix, Vector};

use super::{CovFree, FreeBlocks, LinearInParams, LinearParams, StateSpaceModel};

/// Parameters of the growth model that can be exposed in `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UngmParam {
    A,
    B,
    C,
    D,
    /// Process noise variance.
    Q,
    /// Measurement noise variance.
    R,
}

impl std::str::FromStr for UngmParam {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        Ok(match s {
            "a" => UngmParam::A,
            "b" => UngmParam::B,
            "c" => UngmParam::C,
            "d" => UngmParam::D,
            "q" => UngmParam::Q,
            "r" => UngmParam::R,
            _ => return Err(crate::Error::InvalidArgument(format!("unknown UNGM parameter '{s}'"))),
        })
    }
}

/// Univariate nonstationary growth model with a linear measurement:
///
/// `x_{k+1} = a x_k + b x_k / (1 + x_k²) + c cos(1.2 k) + q_k`,
/// `y_k = d x_k + r_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ungm {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
    pub free: Vec<UngmParam>,
}

impl Default for Ungm {
    fn default() -> Self {
        Ungm { a: 0.5, b: 25.0, c: 8.0, d: 0.05f64.sqrt(), q: 10.0, r: 0.01, m0: 0.0, p0: 0.01, free: vec![UngmParam::A] }
    }
}

struct Values {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    q: f64,
    r: f64,
}

impl Ungm {
    pub fn new(a: f64, b: f64, c: f64, d: f64, q: f64, r: f64) -> Self {
        Ungm { a, b, c, d, q, r, ..Default::default() }
    }

    pub fn with_free(mut self, free: Vec<UngmParam>) -> Self {
        self.free = free;
        self
    }

    pub fn theta(&self) -> Vector {
        Vector::from_iterator(self.free.len(), self.free.iter().map(|p| self.get(*p)))
    }

    pub fn get(&self, p: UngmParam) -> f64 {
        match p {
            UngmParam::A => self.a,
            UngmParam::B => self.b,
            UngmParam::C => self.c,
            UngmParam::D => self.d,
            UngmParam::Q => self.q,
            UngmParam::R => self.r,
        }
    }

    fn values(&self, theta: &Vector) -> Values {
        let mut v = Values { a: self.a, b: self.b, c: self.c, d: self.d, q: self.q, r: self.r };
        for (i, p) in self.free.iter().enumerate() {
            let t = theta[i];
            match p {
                UngmParam::A => v.a = t,
                UngmParam::B => v.b = t,
                UngmParam::C => v.c = t,
                UngmParam::D => v.d = t,
                UngmParam::Q => v.q = t,
                UngmParam::R => v.r = t,
            }
        }
        v
    }

    fn col_of(&self, p: UngmParam) -> Option<usize> {
        self.free.iter().position(|&q| q == p)
    }
}

fn scalar(v: f64) -> Vector {
    Vector::from_element(1, v)
}

fn mat(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

impl StateSpaceModel for Ungm {
    fn state_dim(&self) -> usize {
        1
    }
    fn meas_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        self.free.len()
    }
    fn transition(&self, x: &Vector, k: usize, theta: &Vector) -> Vector {
        let v = self.values(theta);
        let x = x[0];
        scalar(v.a * x + v.b * x / (1.0 + x * x) + v.c * (1.2 * k as f64).cos())
    }
    fn measurement(&self, x: &Vector, theta: &Vector) -> Vector {
        scalar(self.values(theta).d * x[0])
    }
    fn process_cov(&self, theta: &Vector) -> Matrix {
        mat(self.values(theta).q)
    }
    fn measurement_cov(&self, theta: &Vector) -> Matrix {
        mat(self.values(theta).r)
    }
    fn initial_mean(&self, _theta: &Vector) -> Vector {
        scalar(self.m0)
    }
    fn initial_cov(&self, _theta: &Vector) -> Matrix {
        mat(self.p0)
    }
    fn transition_jacobian(&self, x: &Vector, _k: usize, theta: &Vector) -> Matrix {
        let v = self.values(theta);
        let x2 = x[0] * x[0];
        mat(v.a + v.b * (1.0 - x2) / (1.0 + x2).powi(2))
    }
    fn measurement_jacobian(&self, _x: &Vector, theta: &Vector) -> Matrix {
        mat(self.values(theta).d)
    }
    fn transition_param_jacobian(&self, x: &Vector, k: usize, _theta: &Vector) -> Matrix {
        let x = x[0];
        Matrix::from_iterator(
            1,
            self.free.len(),
            self.free.iter().map(|p| match p {
                UngmParam::A => x,
                UngmParam::B => x / (1.0 + x * x),
                UngmParam::C => (1.2 * k as f64).cos(),
                _ => 0.0,
            }),
        )
    }
    fn measurement_param_jacobian(&self, x: &Vector, _theta: &Vector) -> Matrix {
        Matrix::from_iterator(1, self.free.len(), self.free.iter().map(|p| if *p == UngmParam::D { x[0] } else { 0.0 }))
    }
    fn process_cov_derivatives(&self, _theta: &Vector) -> Vec<Matrix> {
        self.free.iter().map(|p| mat(if *p == UngmParam::Q { 1.0 } else { 0.0 })).collect()
    }
    fn measurement_cov_derivatives(&self, _theta: &Vector) -> Vec<Matrix> {
        self.free.iter().map(|p| mat(if *p == UngmParam::R { 1.0 } else { 0.0 })).collect()
    }
    fn initial_mean_jacobian(&self, _theta: &Vector) -> Matrix {
        Matrix::zeros(1, self.free.len())
    }
    fn initial_cov_derivatives(&self, _theta: &Vector) -> Vec<Matrix> {
        vec![mat(0.0); self.free.len()]
    }
    fn linear_measurement(&self, theta: &Vector) -> Option<Matrix> {
        Some(mat(self.values(theta).d))
    }
    fn linear_form(&self) -> Option<&dyn LinearInParams> {
        Some(self)
    }
    fn param_is_positive(&self, i: usize) -> bool {
        matches!(self.free[i], UngmParam::Q | UngmParam::R)
    }
}

/// `f̃(x, k) = (x, x/(1+x²), cos 1.2k)`, `A = (a b c)`; `h̃(x) = x`, `H = d`.
impl LinearInParams for Ungm {
    fn basis_f(&self, x: &Vector, k: usize) -> Vector {
        let x = x[0];
        Vector::from_vec(vec![x, x / (1.0 + x * x), (1.2 * k as f64).cos()])
    }
    fn basis_h(&self, x: &Vector) -> Vector {
        x.clone()
    }
    fn params(&self, theta: &Vector) -> LinearParams {
        let v = self.values(theta);
        LinearParams {
            a: Matrix::from_row_slice(1, 3, &[v.a, v.b, v.c]),
            h: mat(v.d),
            q: mat(v.q),
            r: mat(v.r),
            m0: scalar(self.m0),
            p0: mat(self.p0),
        }
    }
    fn free(&self) -> FreeBlocks {
        let has = |p| self.free.contains(&p);
        FreeBlocks {
            a: has(UngmParam::A) && has(UngmParam::B) && has(UngmParam::C),
            h: has(UngmParam::D),
            q: if has(UngmParam::Q) { CovFree::Full } else { CovFree::Fixed },
            r: if has(UngmParam::R) { CovFree::Full } else { CovFree::Fixed },
            m0: false,
            p0: false,
        }
    }
    fn closed_form_covers(&self) -> bool {
        let free = LinearInParams::free(self);
        self.free.iter().all(|p| match p {
            UngmParam::A | UngmParam::B | UngmParam::C => free.a,
            UngmParam::D => free.h,
            UngmParam::Q | UngmParam::R => true,
        })
    }
    fn to_theta(&self, p: &LinearParams, theta: &Vector) -> Vector {
        let free = LinearInParams::free(self);
        let mut out = theta.clone();
        let mut set = |param, val| {
            if let Some(i) = self.col_of(param) {
                out[i] = val;
            }
        };
        if free.a {
            set(UngmParam::A, p.a[(0, 0)]);
            set(UngmParam::B, p.a[(0, 1)]);
            set(UngmParam::C, p.a[(0, 2)]);
        }
        if free.h {
            set(UngmParam::D, p.h[(0, 0)]);
        }
        if free.q != CovFree::Fixed {
            set(UngmParam::Q, p.q[(0, 0)]);
        }
        if free.r != CovFree::Fixed {
            set(UngmParam::R, p.r[(0, 0)]);
        }
        out
    }
}
