use rayon::prelude::*;
use serde::Serialize;

use super::assembly::AssembledSystem;
use super::regularizer::Regularizer;
use super::solver::TikhonovFactorization;
use crate::error::{Error, Result};

/// Curves spanning less than this in both log axes carry no corner.
const FLAT_LOG_EXTENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LCurvePoint {
    pub beta: f64,
    pub residual_norm: f64,
    pub seminorm: f64,
    /// Signed Menger curvature of `(log ρ, log η)`; absent at the ends.
    pub curvature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LCurveSelection {
    pub beta: f64,
    pub index: usize,
    pub points: Vec<LCurvePoint>,
    /// No usable corner was found; `beta` is the middle of the grid.
    pub low_confidence: bool,
}

/// `n` values from `lo` to `hi`, evenly spaced in `log10`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "β range must satisfy 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("β grid needs at least two points"));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)
            }
        })
        .collect())
}

/// Signed curvature of the circle through three points; positive for a left
/// turn.
fn menger(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> f64 {
    let cross = (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let d = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
    2.0 * cross / (d(p, q) * d(q, r) * d(p, r))
}

/// Evaluates the sweep on an existing factorization and picks the point of
/// largest positive curvature.
pub fn lcurve_from_factorization(
    fac: &TikhonovFactorization,
    betas: &[f64],
) -> Result<LCurveSelection> {
    if betas.len() < 3 {
        return Err(Error::invalid(format!(
            "L-curve needs at least 3 β values, got {}",
            betas.len()
        )));
    }
    if betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) || betas.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::invalid(
            "β grid must be positive and strictly increasing",
        ));
    }

    let norms: Vec<(f64, f64)> = betas.par_iter().map(|&b| fac.norms(b)).collect();
    let logs: Vec<(f64, f64)> = norms.iter().map(|&(r, s)| (r.ln(), s.ln())).collect();

    let mut points: Vec<LCurvePoint> = betas
        .iter()
        .zip(&norms)
        .map(|(&beta, &(residual_norm, seminorm))| LCurvePoint {
            beta,
            residual_norm,
            seminorm,
            curvature: None,
        })
        .collect();
    for i in 1..points.len() - 1 {
        points[i].curvature = Some(menger(logs[i - 1], logs[i], logs[i + 1]));
    }

    let extent = |f: fn(&(f64, f64)) -> f64| {
        let (lo, hi) = logs
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    };
    let flat = !(extent(|p| p.0) > FLAT_LOG_EXTENT || extent(|p| p.1) > FLAT_LOG_EXTENT);

    let best = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            p.curvature
                .filter(|c| c.is_finite() && *c > 0.0)
                .map(|c| (i, c))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1));

    let (index, low_confidence) = match best {
        Some((i, _)) if !flat => (i, false),
        _ => {
            log::warn!("L-curve has no usable corner; falling back to the middle of the β grid");
            (betas.len() / 2, true)
        }
    };
    Ok(LCurveSelection {
        beta: betas[index],
        index,
        points,
        low_confidence,
    })
}

/// L-curve choice of `β` over `betas`; `reg` supplies the penalty shape
/// (its own `β` is ignored).
pub fn lcurve_select(
    system: &AssembledSystem,
    reg: &Regularizer,
    betas: &[f64],
) -> Result<LCurveSelection> {
    if betas.len() < 3 {
        return Err(Error::invalid(format!(
            "L-curve needs at least 3 β values, got {}",
            betas.len()
        )));
    }
    let fac = TikhonovFactorization::new(system, reg)?;
    lcurve_from_factorization(&fac, betas)
}
