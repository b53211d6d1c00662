use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::demography::{
    cell_deaths, simulate_population, AnnualSeries, DemographicInputs, PopulationDrivers,
};
use crate::error::{Error, Result};
use crate::grid::{bin_cells, AgeTimeGrid, BinnedCounts, BinningScheme, CellField, Field};
use crate::onset::WeibullKernel;
use crate::streams::{member_rng, Purpose};

use super::inputs::{immigration_field, CensusBins, ImmigrationYear};

/// Parameters of a synthetic truth. Ages and years come from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTruth {
    /// `u₀(a) = initial_level·exp(−(a/initial_age)⁴)`
    pub initial_level: f64,
    pub initial_age: f64,
    pub births: f64,
    pub immigration_total: f64,
    pub immigration_shape: f64,
    pub immigration_scale: f64,
    /// `μ*(a,t) = (makeham + level·e^{a/length})·e^{drift·(year − t_min)}`
    pub hazard_makeham: f64,
    pub hazard_level: f64,
    pub hazard_length: f64,
    pub hazard_drift: f64,
    /// `λ*(a,t) = peak·σ((a − mid)/width)·taper(a)·(1 + amplitude·sin(2π(t − t_min)/period))`
    pub incidence_peak: f64,
    pub incidence_mid: f64,
    pub incidence_width: f64,
    /// Gaussian taper `exp(−((a − start)/width)²)` above `start`.
    pub incidence_taper_start: f64,
    pub incidence_taper_width: f64,
    pub incidence_amplitude: f64,
    pub incidence_period: f64,
    pub kernel_shape: f64,
    pub kernel_scale: f64,
    pub horizon_years: usize,
    pub onset_floor: f64,
    pub census_width: f64,
    pub all_cause_width: f64,
    pub disease_width: f64,
    pub poisson_noise: bool,
}

impl Default for SyntheticTruth {
    fn default() -> Self {
        Self {
            initial_level: 4e6,
            initial_age: 75.0,
            births: 4e6,
            immigration_total: 1e6,
            immigration_shape: 2.1,
            immigration_scale: 30.5,
            hazard_makeham: 1e-4,
            hazard_level: 3e-5,
            hazard_length: 10.5,
            hazard_drift: -0.01,
            incidence_peak: 0.02,
            incidence_mid: 75.0,
            incidence_width: 4.0,
            incidence_taper_start: 85.0,
            incidence_taper_width: 10.0,
            incidence_amplitude: 0.2,
            incidence_period: 10.0,
            kernel_shape: 1.4769,
            kernel_scale: 6.3841,
            horizon_years: 40,
            onset_floor: 40.0,
            census_width: 5.0,
            all_cause_width: 5.0,
            disease_width: 5.0,
            poisson_noise: false,
        }
    }
}

impl SyntheticTruth {
    pub fn hazard(&self, grid: &AgeTimeGrid) -> CellField {
        CellField::from_fn(*grid, |a, t| {
            let years = t.floor() - grid.t_min();
            (self.hazard_makeham + self.hazard_level * (a / self.hazard_length).exp())
                * (self.hazard_drift * years).exp()
        })
    }

    pub fn incidence(&self, age: f64, t: f64, t_min: f64) -> f64 {
        let ramp = 1.0 / (1.0 + (-(age - self.incidence_mid) / self.incidence_width).exp());
        let taper = if age > self.incidence_taper_start {
            let x = (age - self.incidence_taper_start) / self.incidence_taper_width;
            (-x * x).exp()
        } else {
            1.0
        };
        let drift = 1.0
            + self.incidence_amplitude
                * (std::f64::consts::TAU * (t - t_min) / self.incidence_period).sin();
        self.incidence_peak * ramp * taper * drift
    }

    pub fn kernel(&self) -> Result<WeibullKernel> {
        WeibullKernel::new(self.kernel_shape, self.kernel_scale)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub grid: AgeTimeGrid,
    pub census: CensusBins,
    pub births: AnnualSeries,
    pub immigration: Vec<ImmigrationYear>,
    pub drivers: PopulationDrivers,
    pub hazard: CellField,
    pub population: Field,
    pub kernel: WeibullKernel,
    pub weights: Vec<f64>,
    pub col_scheme: BinningScheme,
    /// True rates on `col_scheme`, year-major.
    pub lambda: Vec<f64>,
    pub all_cause: BinnedCounts,
    pub disease_deaths: BinnedCounts,
    pub disease_deaths_noiseless: BinnedCounts,
}

fn whole_years(grid: &AgeTimeGrid) -> Result<(i64, usize)> {
    let (t0, t1) = (grid.t_min(), grid.t_max());
    if t0.fract() != 0.0 || t1.fract() != 0.0 {
        return Err(Error::invalid(
            "synthetic scenarios need a grid spanning whole calendar years",
        ));
    }
    Ok((t0 as i64, (t1 - t0) as usize))
}

/// Disease deaths by direct summation over onset cells for every death bin.
///
/// Each death bin `(k, j)` gathers the person-years of every onset cell of
/// years `s ≤ j` whose age advanced by `j − s` lands in age bin `k`, weighted
/// by `Γ_{j−s+1}` and the true rate of the onset cell's basis bin.
pub fn convolve_deaths(
    u: &Field,
    weights: &[f64],
    lambda: impl Fn(usize, usize) -> f64,
    rows: &BinningScheme,
    cols: &BinningScheme,
) -> Result<BinnedCounts> {
    let grid = *u.grid();
    let col_age = cols.cell_age_bins(&grid)?;
    let col_year = cols.cell_year_bins(&grid)?;
    rows.check_aligned(&grid)?;
    let (k_rows, j_rows) = (rows.n_age_bins(), rows.n_year_bins());
    let mut out = vec![0.0; k_rows * j_rows];
    for j in 0..j_rows {
        let death_year = rows.year_edges()[j];
        for k in 0..k_rows {
            let (lo, hi) = (rows.age_edges()[k], rows.age_edges()[k + 1]);
            let last = k + 1 == k_rows;
            let mut total = 0.0;
            for (jt, s) in col_year.iter().enumerate() {
                let Some(s) = *s else { continue };
                let elapsed = death_year - cols.year_edges()[s];
                if elapsed < -0.5 {
                    continue;
                }
                let off = elapsed.round() as usize;
                let Some(&w) = weights.get(off) else { continue };
                for (i, r) in col_age.iter().enumerate() {
                    let Some(r) = *r else { continue };
                    let a = grid.age_mid(i) + off as f64;
                    if a >= lo && (a < hi || (last && a == hi)) {
                        total += w * lambda(r, s) * u.cell_mean(i, jt) * grid.cell_area();
                    }
                }
            }
            out[j * k_rows + k] = total;
        }
    }
    BinnedCounts::new(rows.clone(), out)
}

fn add_poisson_noise(counts: &BinnedCounts, seed: u64, stream: usize) -> Result<BinnedCounts> {
    let mut rng = member_rng(seed, Purpose::Synthetic, stream);
    let noisy = counts
        .as_slice()
        .iter()
        .map(|&m| {
            if m > 0.0 {
                Poisson::new(m)
                    .map(|p| p.sample(&mut rng))
                    .map_err(|e| Error::Numerical(format!("Poisson mean {m}: {e}")))
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    BinnedCounts::new(counts.scheme().clone(), noisy)
}

/// Builds a complete synthetic data set with known hazard and incidence.
pub fn generate_synthetic_scenario(
    grid: &AgeTimeGrid,
    truth: &SyntheticTruth,
    seed: u64,
) -> Result<SyntheticScenario> {
    let (first_year, n_years) = whole_years(grid)?;
    let (t0, t1) = (grid.t_min(), grid.t_max());

    let mut initial: Vec<f64> = grid
        .ages()
        .iter()
        .map(|a| truth.initial_level * (-(a / truth.initial_age).powi(4)).exp())
        .collect();
    // the last node holds the cohort already past the modelled range
    *initial.last_mut().unwrap() = 0.0;
    let census_edges =
        BinningScheme::uniform(grid.a_min(), grid.a_max(), truth.census_width, t0, t1, 1.0)?
            .age_edges()
            .to_vec();
    let census_totals = crate::demography::age_profile_totals(grid, &initial, &census_edges)?;
    let census = CensusBins::new(census_edges, census_totals)?;

    let births = AnnualSeries::constant(first_year, n_years, truth.births);
    let immigration: Vec<ImmigrationYear> = (0..n_years as i64)
        .map(|y| ImmigrationYear {
            year: first_year + y,
            total: truth.immigration_total,
            shape: truth.immigration_shape,
            scale: truth.immigration_scale,
        })
        .collect();
    let mut unused = member_rng(seed, Purpose::Synthetic, usize::MAX);
    let drivers = PopulationDrivers {
        initial_population: initial,
        births: births.clone(),
        immigration: immigration_field(grid, &immigration, 0.0, &mut unused)?,
    };
    let hazard = truth.hazard(grid);
    let inputs = DemographicInputs {
        drivers: drivers.clone(),
        hazard: hazard.clone(),
    };
    let population = simulate_population(&inputs, grid)?;

    let area = grid.cell_area();
    let deaths = cell_deaths(&population, &inputs)?;
    let all_rows = BinningScheme::uniform(
        grid.a_min(),
        grid.a_max(),
        truth.all_cause_width,
        t0,
        t1,
        1.0,
    )?;
    let all_cause = BinnedCounts::new(
        all_rows.clone(),
        bin_cells(grid, &all_rows, |i, j| deaths.get(i, j) / area)?
            .as_slice()
            .to_vec(),
    )?;

    let col_scheme = BinningScheme::uniform(truth.onset_floor, grid.a_max(), 1.0, t0, t1, 1.0)?;
    let k_cols = col_scheme.n_age_bins();
    let lambda: Vec<f64> = (0..col_scheme.n_bins())
        .map(|idx| {
            let (r, s) = (idx % k_cols, idx / k_cols);
            let a = 0.5 * (col_scheme.age_edges()[r] + col_scheme.age_edges()[r + 1]);
            let t = 0.5 * (col_scheme.year_edges()[s] + col_scheme.year_edges()[s + 1]);
            truth.incidence(a, t, t0)
        })
        .collect();

    let kernel = truth.kernel()?;
    let weights = kernel.year_weights(truth.horizon_years);
    let disease_rows = BinningScheme::uniform(
        truth.onset_floor,
        grid.a_max(),
        truth.disease_width,
        t0,
        t1,
        1.0,
    )?;
    let noiseless = convolve_deaths(
        &population,
        &weights,
        |r, s| lambda[s * k_cols + r],
        &disease_rows,
        &col_scheme,
    )?;

    let (all_cause, disease_deaths) = if truth.poisson_noise {
        (
            add_poisson_noise(&all_cause, seed, 0)?,
            add_poisson_noise(&noiseless, seed, 1)?,
        )
    } else {
        (all_cause, noiseless.clone())
    };

    Ok(SyntheticScenario {
        grid: *grid,
        census,
        births,
        immigration,
        drivers,
        hazard,
        population,
        kernel,
        weights,
        col_scheme,
        lambda,
        all_cause,
        disease_deaths,
        disease_deaths_noiseless: noiseless,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backcalc::assemble_operator;
    use nalgebra::DVector;

    fn small() -> (AgeTimeGrid, SyntheticTruth) {
        let g = AgeTimeGrid::new(0.0, 100.0, 2000.0, 2006.0, 0.5).unwrap();
        (g, SyntheticTruth::default())
    }

    #[test]
    fn convolution_matches_operator() {
        let (g, truth) = small();
        let sc = generate_synthetic_scenario(&g, &truth, 1).unwrap();
        let sys = assemble_operator(
            &sc.population,
            &sc.weights,
            sc.disease_deaths.scheme(),
            &sc.col_scheme,
        )
        .unwrap();
        let d = &sys.a * DVector::from_column_slice(&sc.lambda);
        for (x, y) in d.iter().zip(sc.disease_deaths_noiseless.as_slice()) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn without_hazard_cohorts_keep_their_size() {
        let g = AgeTimeGrid::new(0.0, 40.0, 2000.0, 2005.0, 0.5).unwrap();
        let truth = SyntheticTruth {
            hazard_makeham: 0.0,
            hazard_level: 0.0,
            births: 0.0,
            immigration_total: 0.0,
            initial_age: 1e9,
            onset_floor: 20.0,
            ..Default::default()
        };
        let sc = generate_synthetic_scenario(&g, &truth, 1).unwrap();
        let u = &sc.population;
        let steps = g.n_time_cells();
        for i in 0..g.n_a() - 1 - steps {
            assert_eq!(u.get(i + steps, steps), u.get(i, 0));
        }
    }

    #[test]
    fn poisson_noise_keeps_the_mean() {
        let (g, mut truth) = small();
        truth.poisson_noise = true;
        truth.incidence_peak = 1e-6;
        let base = generate_synthetic_scenario(&g, &truth, 0).unwrap();
        let m = base.disease_deaths_noiseless.as_slice();
        let reps = 200;
        let mut sum = vec![0.0; m.len()];
        for seed in 0..reps {
            let d = add_poisson_noise(&base.disease_deaths_noiseless, seed, 1).unwrap();
            for (s, v) in sum.iter_mut().zip(d.as_slice()) {
                *s += v;
            }
        }
        for (s, &mu) in sum.iter().zip(m) {
            let mean = s / reps as f64;
            let se = (mu / reps as f64).sqrt();
            assert!((mean - mu).abs() <= 3.0 * se.max(1e-12), "{mean} vs {mu}");
        }
    }
}
