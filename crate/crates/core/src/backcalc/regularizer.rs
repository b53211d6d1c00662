use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smoothness penalty `β‖Rλ‖²` with `R = I_{J′} ⊗ C` and `CᵀC = L`, where `L`
/// is the `K′ × K′` second-difference matrix (2 on the diagonal, −1 beside
/// it).
///
/// `C` is lower bidiagonal, computed from the bottom row up so that `CᵀC`
/// reproduces `L` exactly. `R` is never materialized for real problems; the
/// methods below apply it block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    n_age: usize,
    n_year: usize,
    beta: f64,
    diag: Vec<f64>,
    /// `sub[i] = C[i+1, i]`
    sub: Vec<f64>,
}

/// A full-rank penalty operator `R` as seen by the solver.
pub trait Penalty: std::fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;
    /// Solves `R x = b`.
    fn solve_r(&self, b: &[f64]) -> Vec<f64>;
    /// Solves `Rᵀ x = b`.
    fn solve_rt(&self, b: &[f64]) -> Vec<f64>;
    /// `RᵀR x`
    fn apply_rtr(&self, x: &[f64]) -> Vec<f64>;
    /// `‖Rx‖₂`
    fn seminorm(&self, x: &[f64]) -> f64;
}

/// `R = I`, plain ridge regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityPenalty(pub usize);

impl Penalty for IdentityPenalty {
    fn dim(&self) -> usize {
        self.0
    }
    fn solve_r(&self, b: &[f64]) -> Vec<f64> {
        b.to_vec()
    }
    fn solve_rt(&self, b: &[f64]) -> Vec<f64> {
        b.to_vec()
    }
    fn apply_rtr(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn seminorm(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn build_regularizer(n_age: usize, n_year: usize, beta: f64) -> Result<Regularizer> {
    if n_age < 2 {
        return Err(Error::invalid(format!(
            "smoothness penalty needs at least 2 age bins, got {n_age}"
        )));
    }
    if n_year < 1 {
        return Err(Error::invalid("smoothness penalty needs at least one year"));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid(format!("β must be positive, got {beta}")));
    }
    let mut diag = vec![0.0; n_age];
    let mut sub = vec![0.0; n_age - 1];
    diag[n_age - 1] = 2f64.sqrt();
    for i in (0..n_age - 1).rev() {
        sub[i] = -1.0 / diag[i + 1];
        diag[i] = (2.0 - sub[i] * sub[i]).sqrt();
    }
    Ok(Regularizer {
        n_age,
        n_year,
        beta,
        diag,
        sub,
    })
}

impl Regularizer {
    pub fn n_age(&self) -> usize {
        self.n_age
    }
    pub fn n_year(&self) -> usize {
        self.n_year
    }
    pub fn dim(&self) -> usize {
        self.n_age * self.n_year
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        build_regularizer(self.n_age, self.n_year, beta)
    }

    pub fn l_matrix(&self) -> DMatrix<f64> {
        let n = self.n_age;
        DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        })
    }

    pub fn c_matrix(&self) -> DMatrix<f64> {
        let n = self.n_age;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if i == j + 1 {
                self.sub[j]
            } else {
                0.0
            }
        })
    }

    /// Dense `R`; for tests and small problems only.
    pub fn r_matrix(&self) -> DMatrix<f64> {
        let c = self.c_matrix();
        let n = self.dim();
        let mut r = DMatrix::zeros(n, n);
        for s in 0..self.n_year {
            r.view_mut((s * self.n_age, s * self.n_age), (self.n_age, self.n_age))
                .copy_from(&c);
        }
        r
    }

    /// The penalty rows `√β·R` of the augmented least-squares matrix.
    pub fn augmented_rows(&self) -> DMatrix<f64> {
        self.r_matrix() * self.beta.sqrt()
    }

    fn check(&self, x: &[f64]) {
        assert_eq!(x.len(), self.dim(), "vector length does not match penalty");
    }

    pub fn apply_r(&self, x: &[f64]) -> Vec<f64> {
        self.check(x);
        let mut out = vec![0.0; x.len()];
        for (xb, ob) in x.chunks(self.n_age).zip(out.chunks_mut(self.n_age)) {
            ob[0] = self.diag[0] * xb[0];
            for i in 1..self.n_age {
                ob[i] = self.diag[i] * xb[i] + self.sub[i - 1] * xb[i - 1];
            }
        }
        out
    }

    pub fn apply_rt(&self, y: &[f64]) -> Vec<f64> {
        self.check(y);
        let n = self.n_age;
        let mut out = vec![0.0; y.len()];
        for (yb, ob) in y.chunks(n).zip(out.chunks_mut(n)) {
            for i in 0..n - 1 {
                ob[i] = self.diag[i] * yb[i] + self.sub[i] * yb[i + 1];
            }
            ob[n - 1] = self.diag[n - 1] * yb[n - 1];
        }
        out
    }

    /// `(I ⊗ L)x` via the stencil directly.
    pub fn apply_rtr(&self, x: &[f64]) -> Vec<f64> {
        self.check(x);
        let n = self.n_age;
        let mut out = vec![0.0; x.len()];
        for (xb, ob) in x.chunks(n).zip(out.chunks_mut(n)) {
            for i in 0..n {
                let left = if i > 0 { xb[i - 1] } else { 0.0 };
                let right = if i + 1 < n { xb[i + 1] } else { 0.0 };
                ob[i] = 2.0 * xb[i] - left - right;
            }
        }
        out
    }

    /// Solves `R x = b`.
    pub fn solve_r(&self, b: &[f64]) -> Vec<f64> {
        self.check(b);
        let mut x = vec![0.0; b.len()];
        for (bb, xb) in b.chunks(self.n_age).zip(x.chunks_mut(self.n_age)) {
            xb[0] = bb[0] / self.diag[0];
            for i in 1..self.n_age {
                xb[i] = (bb[i] - self.sub[i - 1] * xb[i - 1]) / self.diag[i];
            }
        }
        x
    }

    /// Solves `Rᵀ x = b`.
    pub fn solve_rt(&self, b: &[f64]) -> Vec<f64> {
        self.check(b);
        let n = self.n_age;
        let mut x = vec![0.0; b.len()];
        for (bb, xb) in b.chunks(n).zip(x.chunks_mut(n)) {
            xb[n - 1] = bb[n - 1] / self.diag[n - 1];
            for i in (0..n - 1).rev() {
                xb[i] = (bb[i] - self.sub[i] * xb[i + 1]) / self.diag[i];
            }
        }
        x
    }

    /// `‖RᵀR‖₂`, the largest eigenvalue `2 + 2cos(π/(K′+1))` of `L`.
    pub fn gram_norm(&self) -> f64 {
        2.0 + 2.0 * (std::f64::consts::PI / (self.n_age as f64 + 1.0)).cos()
    }

    /// `‖Rx‖₂`
    pub fn seminorm(&self, x: &[f64]) -> f64 {
        self.apply_r(x).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Penalty for Regularizer {
    fn dim(&self) -> usize {
        Regularizer::dim(self)
    }
    fn solve_r(&self, b: &[f64]) -> Vec<f64> {
        Regularizer::solve_r(self, b)
    }
    fn solve_rt(&self, b: &[f64]) -> Vec<f64> {
        Regularizer::solve_rt(self, b)
    }
    fn apply_rtr(&self, x: &[f64]) -> Vec<f64> {
        Regularizer::apply_rtr(self, x)
    }
    fn seminorm(&self, x: &[f64]) -> f64 {
        Regularizer::seminorm(self, x)
    }
}
