use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SVD};

use super::assembly::AssembledSystem;
use super::regularizer::{Penalty, Regularizer};
use crate::error::{Error, Result};

/// Bound on `‖(AᵀA + βRᵀR)λ − Aᵀd‖ / ‖Aᵀd‖` accepted after a solve.
pub const NORMAL_EQUATION_TOL: f64 = 1e-8;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceSolution {
    pub lambda: Vec<f64>,
    pub n_age: usize,
    pub n_year: usize,
    pub beta: f64,
    /// `‖Aλ − d‖₂`
    pub residual_norm: f64,
    /// `‖Rλ‖₂`
    pub seminorm: f64,
    /// Relative normal-equation residual.
    pub normal_residual: f64,
}

impl IncidenceSolution {
    /// Rate for basis age bin `r` in incidence year `s`.
    pub fn get(&self, r: usize, s: usize) -> f64 {
        self.lambda[s * self.n_age + r]
    }

    pub fn year_block(&self, s: usize) -> &[f64] {
        &self.lambda[s * self.n_age..(s + 1) * self.n_age]
    }
}

/// Standard-form SVD of the Tikhonov problem, reusable across `β`.
///
/// With `z = Rλ` the problem becomes `min ‖Āz − d‖² + β‖z‖²` for
/// `Ā = AR⁻¹`, whose solution is a filtered sum over the singular triplets
/// of `Ā`. The factorization does not depend on `β`, so a whole sweep costs
/// one SVD.
#[derive(Debug, Clone)]
pub struct TikhonovFactorization {
    a: DMatrix<f64>,
    d: DVector<f64>,
    reg: Arc<dyn Penalty>,
    n_age: usize,
    n_year: usize,
    /// Right singular vectors of `Ā`, one per column.
    v: DMatrix<f64>,
    sigma: DVector<f64>,
    /// `Uᵀd`
    coef: DVector<f64>,
    /// `‖d − UUᵀd‖²`, the part of the data no `λ` can fit.
    unreachable_sq: f64,
    atd_norm: f64,
}

impl TikhonovFactorization {
    pub fn new(system: &AssembledSystem, reg: &Regularizer) -> Result<Self> {
        Self::with_penalty(system, Arc::new(reg.clone()))
    }

    pub fn with_penalty(system: &AssembledSystem, reg: Arc<dyn Penalty>) -> Result<Self> {
        let d = system.deaths()?.clone();
        let a = &system.a;
        if reg.dim() != a.ncols() {
            return Err(Error::Dimension {
                what: "smoothness penalty".into(),
                expected: a.ncols(),
                actual: reg.dim(),
            });
        }
        if d.len() != a.nrows() {
            return Err(Error::Dimension {
                what: "death vector".into(),
                expected: a.nrows(),
                actual: d.len(),
            });
        }
        if let Some(bad) = a.iter().chain(d.iter()).find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "system contains non-finite entry {bad}"
            )));
        }
        let (m, n) = a.shape();

        // Āᵀ = R⁻ᵀAᵀ, built column by column from the rows of A
        let mut abar_t = DMatrix::zeros(n, m);
        for i in 0..m {
            let row: Vec<f64> = a.row(i).iter().copied().collect();
            abar_t.set_column(i, &DVector::from_vec(reg.solve_rt(&row)));
        }

        let (u, sigma, v) = if m >= n {
            let svd = SVD::try_new(abar_t.transpose(), true, true, SVD_EPS, SVD_MAX_ITER)
                .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
            (
                svd.u.unwrap(),
                svd.singular_values,
                svd.v_t.unwrap().transpose(),
            )
        } else {
            // Ā is wide: factor Āᵀ = U′ΣV′ᵀ, so Ā = V′ΣU′ᵀ
            let svd = SVD::try_new(abar_t, true, true, SVD_EPS, SVD_MAX_ITER)
                .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
            (
                svd.v_t.unwrap().transpose(),
                svd.singular_values,
                svd.u.unwrap(),
            )
        };

        let coef = u.tr_mul(&d);
        let unreachable_sq = (&d - &u * &coef).norm_squared();
        let atd_norm = a.tr_mul(&d).norm();
        Ok(Self {
            a: a.clone(),
            d,
            reg,
            n_age: system.col_scheme.n_age_bins(),
            n_year: system.col_scheme.n_year_bins(),
            v,
            sigma,
            coef,
            unreachable_sq,
            atd_norm,
        })
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn n_cols(&self) -> usize {
        self.a.ncols()
    }

    /// `λ(β)` without the post-solve check.
    pub fn lambda(&self, beta: f64) -> Vec<f64> {
        let mut z = DVector::zeros(self.v.nrows());
        for (i, (&s, &c)) in self.sigma.iter().zip(self.coef.iter()).enumerate() {
            let f = s * c / (s * s + beta);
            if f != 0.0 {
                z.axpy(f, &self.v.column(i), 1.0);
            }
        }
        self.reg.solve_r(z.as_slice())
    }

    /// `(‖Aλ − d‖, ‖Rλ‖)` at `β` from the singular spectrum.
    ///
    /// Every term is monotone in `β` under rounding, so a sweep is exactly
    /// monotone as well.
    pub fn norms(&self, beta: f64) -> (f64, f64) {
        let mut res_sq = self.unreachable_sq;
        let mut semi_sq = 0.0;
        for (&s, &c) in self.sigma.iter().zip(self.coef.iter()) {
            let r = c / (1.0 + s * s / beta);
            let z = s * c / (s * s + beta);
            res_sq += r * r;
            semi_sq += z * z;
        }
        (res_sq.sqrt(), semi_sq.sqrt())
    }

    /// Relative residual of the normal equations at `λ`.
    pub fn normal_residual(&self, lambda: &[f64], beta: f64) -> f64 {
        let x = DVector::from_column_slice(lambda);
        let r = &self.a * &x - &self.d;
        let mut g = self.a.tr_mul(&r);
        let pen = self.reg.apply_rtr(lambda);
        for (gi, pi) in g.iter_mut().zip(pen) {
            *gi += beta * pi;
        }
        let g = g.norm();
        if self.atd_norm > 0.0 {
            g / self.atd_norm
        } else if g == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn solve(&self, beta: f64) -> Result<IncidenceSolution> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid(format!("β must be positive, got {beta}")));
        }
        let lambda = self.lambda(beta);
        if let Some(bad) = lambda.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "solution has non-finite entry {bad} at β={beta}"
            )));
        }
        let normal_residual = self.normal_residual(&lambda, beta);
        if !(normal_residual <= NORMAL_EQUATION_TOL) {
            return Err(Error::Numerical(format!(
                "normal equations violated at β={beta}: relative residual {normal_residual:e}"
            )));
        }
        let x = DVector::from_column_slice(&lambda);
        let residual_norm = (&self.a * &x - &self.d).norm();
        let seminorm = self.reg.seminorm(&lambda);
        Ok(IncidenceSolution {
            lambda,
            n_age: self.n_age,
            n_year: self.n_year,
            beta,
            residual_norm,
            seminorm,
            normal_residual,
        })
    }
}

/// Minimizes `‖Aλ − d‖² + β‖Rλ‖²` for the `β` carried by `reg`.
pub fn solve_tikhonov(system: &AssembledSystem, reg: &Regularizer) -> Result<IncidenceSolution> {
    TikhonovFactorization::new(system, reg)?.solve(reg.beta())
}

/// `‖AᵀA‖₂ = σ_max(A)²`.
pub fn operator_norm_sq(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let m = if a.nrows() >= a.ncols() {
        a.clone()
    } else {
        a.transpose()
    };
    let svd = SVD::try_new(m, false, false, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let s = svd.singular_values.max();
    Ok(s * s)
}
