use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::demography::{AnnualSeries, PopulationDrivers};
use crate::error::{Error, Result};
use crate::grid::{AgeTimeGrid, CellField};
use crate::onset::WeibullKernel;

/// Age-binned head counts at the start of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusBins {
    edges: Vec<f64>,
    totals: Vec<f64>,
}

impl CensusBins {
    pub fn new(edges: Vec<f64>, totals: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || totals.len() + 1 != edges.len() {
            return Err(Error::invalid(format!(
                "census needs one total per bin ({} edges, {} totals)",
                edges.len(),
                totals.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("census age edges must increase strictly"));
        }
        for (k, &t) in totals.iter().enumerate() {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::invalid(format!(
                    "census total {t} for ages [{}, {}) is not a nonnegative count",
                    edges[k],
                    edges[k + 1]
                )));
            }
        }
        Ok(Self { edges, totals })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }
}

/// One year of immigrants: `total` persons with Weibull-shaped ages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImmigrationYear {
    pub year: i64,
    pub total: f64,
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSampling {
    /// Relative standard deviation of the per-member, per-year multiplicative
    /// perturbation of the immigration Weibull shape and scale.
    pub immigration_rel_std: f64,
}

impl Default for InputSampling {
    fn default() -> Self {
        Self {
            immigration_rel_std: 0.05,
        }
    }
}

/// Spreads each census bin over its cohorts with flat Dirichlet weights, so
/// every allocation on the simplex is equally likely and the bin total is
/// kept exactly.
pub fn allocate_census<R: Rng + ?Sized>(
    grid: &AgeTimeGrid,
    census: &CensusBins,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dt = grid.step();
    let mut density = vec![0.0; grid.n_a()];
    for (k, &total) in census.totals.iter().enumerate() {
        let (lo, hi) = (census.edges[k], census.edges[k + 1]);
        let i0 = grid.age_index(lo).ok_or(Error::Misaligned {
            what: "census age edge".into(),
            value: lo,
        })?;
        let i1 = grid.age_index(hi).ok_or(Error::Misaligned {
            what: "census age edge".into(),
            value: hi,
        })?;
        let w: Vec<f64> = (i0..i1).map(|_| Exp1.sample(rng)).collect();
        let sum: f64 = w.iter().sum();
        for (slot, wi) in density[i0..i1].iter_mut().zip(&w) {
            *slot = total * wi / sum / dt;
        }
        let kept: f64 = density[i0..i1].iter().sum::<f64>() * dt;
        if (kept - total).abs() > 1e-9 * total.max(1.0) {
            return Err(Error::Numerical(format!(
                "census allocation for ages [{lo}, {hi}) holds {kept} instead of {total}"
            )));
        }
    }
    Ok(density)
}

/// Immigration density per age cell for one year's record.
pub fn immigration_profile(grid: &AgeTimeGrid, total: f64, kernel: &WeibullKernel) -> Vec<f64> {
    let dt = grid.step();
    let mass = kernel.cdf(grid.a_max()) - kernel.cdf(grid.a_min());
    if total == 0.0 || mass <= 0.0 {
        return vec![0.0; grid.n_age_cells()];
    }
    (0..grid.n_age_cells())
        .map(|i| total * (kernel.cdf(grid.age(i + 1)) - kernel.cdf(grid.age(i))) / mass / dt)
        .collect()
}

fn perturbed<R: Rng + ?Sized>(value: f64, rel_std: f64, rng: &mut R) -> Result<f64> {
    if rel_std == 0.0 {
        return Ok(value);
    }
    for _ in 0..1000 {
        let z: f64 = StandardNormal.sample(rng);
        let v = value * (1.0 + rel_std * z);
        if v > 0.0 {
            return Ok(v);
        }
    }
    Err(Error::Config(format!(
        "immigration perturbation of {rel_std} keeps producing nonpositive parameters"
    )))
}

/// Builds immigration densities for every time cell from annual records,
/// perturbing shape and scale independently per year.
pub fn immigration_field<R: Rng + ?Sized>(
    grid: &AgeTimeGrid,
    records: &[ImmigrationYear],
    rel_std: f64,
    rng: &mut R,
) -> Result<CellField> {
    if !(rel_std.is_finite() && rel_std >= 0.0) {
        return Err(Error::Config(format!(
            "immigration_rel_std must be ≥ 0, got {rel_std}"
        )));
    }
    let mut field = CellField::zeros(*grid);
    let mut profiles: Vec<(i64, Vec<f64>)> = Vec::new();
    for rec in records {
        let shape = perturbed(rec.shape, rel_std, rng)?;
        let scale = perturbed(rec.scale, rel_std, rng)?;
        let kernel = WeibullKernel::new(shape, scale)?;
        profiles.push((rec.year, immigration_profile(grid, rec.total, &kernel)));
    }
    for j in 0..grid.n_time_cells() {
        let year = grid.time_mid(j).floor() as i64;
        let (_, p) = profiles
            .iter()
            .find(|(y, _)| *y == year)
            .ok_or_else(|| Error::invalid(format!("no immigration record for year {year}")))?;
        field.at_time_mut(j).copy_from_slice(p);
    }
    Ok(field)
}

/// One member's population drivers: census allocation and immigration are
/// random, births are shared.
pub fn sample_member_inputs<R: Rng + ?Sized>(
    grid: &AgeTimeGrid,
    census: &CensusBins,
    births: &AnnualSeries,
    immigration: &[ImmigrationYear],
    sampling: &InputSampling,
    rng: &mut R,
) -> Result<PopulationDrivers> {
    for rec in immigration {
        if !(rec.total.is_finite() && rec.total >= 0.0) {
            return Err(Error::invalid(format!(
                "immigration total for {} must be a nonnegative count, got {}",
                rec.year, rec.total
            )));
        }
    }
    let initial_population = allocate_census(grid, census, rng)?;
    let immigration = immigration_field(grid, immigration, sampling.immigration_rel_std, rng)?;
    let drivers = PopulationDrivers {
        initial_population,
        births: births.clone(),
        immigration,
    };
    drivers.validate(grid)?;
    Ok(drivers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demography::age_profile_totals;
    use crate::streams::{member_rng, Purpose};

    #[test]
    fn census_totals_are_exact() {
        let g = AgeTimeGrid::new(0.0, 10.0, 0.0, 1.0, 1.0).unwrap();
        let census = CensusBins::new(vec![0.0, 5.0, 10.0], vec![1000.0, 0.0]).unwrap();
        let u = allocate_census(&g, &census, &mut member_rng(3, Purpose::Inputs, 0)).unwrap();
        assert!(u.iter().all(|v| *v >= 0.0));
        let sum: f64 = u[..5].iter().sum();
        assert!((sum - 1000.0).abs() < 1e-9);
        assert!(u[5..].iter().all(|v| *v == 0.0));
        let totals = age_profile_totals(&g, &u, census.edges()).unwrap();
        assert!((totals[0] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn zero_immigration_gives_zero_field() {
        let g = AgeTimeGrid::new(0.0, 10.0, 2000.0, 2002.0, 0.5).unwrap();
        let recs: Vec<_> = (2000..2002)
            .map(|year| ImmigrationYear {
                year,
                total: 0.0,
                shape: 2.1,
                scale: 30.5,
            })
            .collect();
        let f = immigration_field(&g, &recs, 0.05, &mut member_rng(1, Purpose::Inputs, 0)).unwrap();
        assert!(f.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn immigration_year_total_is_kept() {
        let g = AgeTimeGrid::new(0.0, 100.0, 2006.0, 2007.0, 0.5).unwrap();
        let k = WeibullKernel::new(2.1, 30.5).unwrap();
        let p = immigration_profile(&g, 1.2e6, &k);
        let per_year: f64 = p.iter().sum::<f64>() * g.step();
        assert!((per_year - 1.2e6).abs() < 1e-6);
    }

    #[test]
    fn missing_immigration_year_rejected() {
        let g = AgeTimeGrid::new(0.0, 10.0, 2000.0, 2002.0, 0.5).unwrap();
        let recs = [ImmigrationYear {
            year: 2000,
            total: 10.0,
            shape: 2.0,
            scale: 5.0,
        }];
        assert!(immigration_field(&g, &recs, 0.0, &mut member_rng(1, Purpose::Inputs, 0)).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = AgeTimeGrid::new(0.0, 20.0, 2000.0, 2002.0, 0.5).unwrap();
        let census = CensusBins::new(vec![0.0, 10.0, 20.0], vec![500.0, 700.0]).unwrap();
        let births = AnnualSeries::constant(2000, 2, 100.0);
        let recs: Vec<_> = (2000..2002)
            .map(|year| ImmigrationYear {
                year,
                total: 50.0,
                shape: 2.0,
                scale: 8.0,
            })
            .collect();
        let s = InputSampling::default();
        let a = sample_member_inputs(
            &g,
            &census,
            &births,
            &recs,
            &s,
            &mut member_rng(5, Purpose::Inputs, 2),
        )
        .unwrap();
        let b = sample_member_inputs(
            &g,
            &census,
            &births,
            &recs,
            &s,
            &mut member_rng(5, Purpose::Inputs, 2),
        )
        .unwrap();
        let c = sample_member_inputs(
            &g,
            &census,
            &births,
            &recs,
            &s,
            &mut member_rng(5, Purpose::Inputs, 3),
        )
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a.initial_population, c.initial_population);
        assert_eq!(a.births, c.births);
    }
}
