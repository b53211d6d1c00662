//! Forward integration of the age-structured transport equation
//!
//! ```text
//! ∂u/∂t + ∂u/∂a = −μ(a,t)·u + ξ(a,t),   u(a_min, t) = α(t),   u(a, t_min) = u₀(a)
//! ```
//!
//! along its characteristics. With equal age and time steps every node moves
//! exactly one node per step, and with μ and ξ held at their cell-centre
//! values the update over one step is the exact solution of the ODE along
//! the characteristic:
//!
//! ```text
//! u(a+Δ, t+Δ) = u(a,t)·e^{−μΔ} + ξ·(1 − e^{−μΔ})/μ
//! ```
//!
//! `u` is a density in persons per year of age. For head counts, node `i`
//! stands for the cohort occupying `[a_i, a_i + Δ)`, so a cohort holds
//! `u_i·Δ` persons. The node at `a_max` receives the cohort that has just
//! aged out of the modelled range.

use crate::error::{Error, Result};
use crate::grid::{AgeTimeGrid, CellField, Field};

/// A per-calendar-year series; year `y` covers `[y, y+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualSeries {
    first_year: i64,
    values: Vec<f64>,
}

impl AnnualSeries {
    pub fn new(first_year: i64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("annual series is empty"));
        }
        Ok(Self { first_year, values })
    }

    pub fn constant(first_year: i64, n_years: usize, value: f64) -> Self {
        Self {
            first_year,
            values: vec![value; n_years.max(1)],
        }
    }

    pub fn first_year(&self) -> i64 {
        self.first_year
    }

    pub fn last_year(&self) -> i64 {
        self.first_year + self.values.len() as i64 - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, year: i64) -> Option<f64> {
        let idx = year - self.first_year;
        (idx >= 0)
            .then(|| self.values.get(idx as usize).copied())
            .flatten()
    }

    /// Value for the calendar year containing time `t`.
    pub fn at(&self, t: f64) -> Option<f64> {
        self.get(t.floor() as i64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.first_year + i as i64, *v))
    }
}

/// Everything but the hazard: what a population member is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDrivers {
    /// Density at `t_min` on the age nodes (persons per year of age).
    pub initial_population: Vec<f64>,
    /// Births α(t), persons per year.
    pub births: AnnualSeries,
    /// Immigration ξ(a,t), persons per year per year of age, at cell centres.
    pub immigration: CellField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemographicInputs {
    pub drivers: PopulationDrivers,
    /// Mortality hazard μ(a,t) at cell centres, 1/year.
    pub hazard: CellField,
}

fn check_profile(what: &str, grid: &AgeTimeGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.n_a() {
        return Err(Error::Dimension {
            what: what.into(),
            expected: grid.n_a(),
            actual: values.len(),
        });
    }
    for (i, &v) in values.iter().enumerate() {
        let location = format!("age node {i} (age {})", grid.age(i));
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: what.into(),
                location,
            });
        }
        if v < 0.0 {
            return Err(Error::Negative {
                what: what.into(),
                location,
                value: v,
            });
        }
    }
    Ok(())
}

fn check_cells(what: &str, grid: &AgeTimeGrid, field: &CellField) -> Result<()> {
    if field.grid() != grid {
        return Err(Error::invalid(format!("{what} lives on a different grid")));
    }
    if let Some((i, j)) = field.first_non_finite() {
        return Err(Error::NonFinite {
            what: what.into(),
            location: format!(
                "cell ({i}, {j}) at age {}, time {}",
                grid.age_mid(i),
                grid.time_mid(j)
            ),
        });
    }
    if let Some((i, j, v)) = field.first_negative() {
        return Err(Error::Negative {
            what: what.into(),
            location: format!(
                "cell ({i}, {j}) at age {}, time {}",
                grid.age_mid(i),
                grid.time_mid(j)
            ),
            value: v,
        });
    }
    Ok(())
}

impl PopulationDrivers {
    pub fn validate(&self, grid: &AgeTimeGrid) -> Result<()> {
        check_profile("initial population", grid, &self.initial_population)?;
        check_cells("immigration", grid, &self.immigration)?;
        for j in 0..grid.n_time_cells() {
            let t = grid.time_mid(j);
            match self.births.at(t) {
                None => {
                    return Err(Error::invalid(format!(
                        "births series ({}..={}) does not cover time {t}",
                        self.births.first_year(),
                        self.births.last_year()
                    )))
                }
                Some(b) if !b.is_finite() => {
                    return Err(Error::NonFinite {
                        what: "births".into(),
                        location: format!("year {}", t.floor()),
                    })
                }
                Some(b) if b < 0.0 => {
                    return Err(Error::Negative {
                        what: "births".into(),
                        location: format!("year {}", t.floor()),
                        value: b,
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Boundary density entering during time cell `j`.
    pub fn birth_density(&self, grid: &AgeTimeGrid, j: usize) -> Result<f64> {
        // births in the step are α·Δ persons spread over an age width Δ
        self.births
            .at(grid.time_mid(j))
            .ok_or_else(|| Error::invalid(format!("no births for time {}", grid.time_mid(j))))
    }
}

impl DemographicInputs {
    pub fn validate(&self, grid: &AgeTimeGrid) -> Result<()> {
        self.drivers.validate(grid)?;
        check_cells("hazard", grid, &self.hazard)
    }
}

/// Head counts exchanged during one or more steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepFlux {
    pub births: f64,
    pub immigration: f64,
    pub deaths: f64,
    pub aged_out: f64,
}

impl std::ops::AddAssign for StepFlux {
    fn add_assign(&mut self, o: Self) {
        self.births += o.births;
        self.immigration += o.immigration;
        self.deaths += o.deaths;
        self.aged_out += o.aged_out;
    }
}

/// `h − (1 − e^{−h})`, accurate for small `h`.
fn loss_excess(h: f64) -> f64 {
    if h < 1e-3 {
        h * h * (0.5 - h / 6.0 + h * h / 24.0)
    } else {
        h + (-h).exp_m1()
    }
}

/// Moves every cohort one node along its characteristic.
///
/// `mu` and `xi` are the age-cell values for this step. When `cell_deaths`
/// is given, deaths (persons) are added per age cell.
pub fn advance_step(
    grid: &AgeTimeGrid,
    u: &[f64],
    next: &mut [f64],
    mu: &[f64],
    xi: &[f64],
    birth_density: f64,
    mut cell_deaths: Option<&mut [f64]>,
) -> StepFlux {
    let n = grid.n_a();
    let dt = grid.step();
    debug_assert_eq!(u.len(), n);
    debug_assert_eq!(next.len(), n);
    let mut flux = StepFlux {
        births: birth_density * dt,
        ..Default::default()
    };
    next[0] = birth_density;
    for i in 0..n - 1 {
        let (m, x) = (mu[i], xi[i]);
        let h = m * dt;
        let lost = -(-h).exp_m1(); // 1 − e^{−h}
        let (gain, imm_deaths) = if h < 1e-12 {
            (x * dt, 0.0)
        } else {
            (x * lost / m, x * loss_excess(h) / m)
        };
        next[i + 1] = u[i] * (1.0 - lost) + gain;
        let died = (u[i] * lost + imm_deaths) * dt;
        flux.deaths += died;
        flux.immigration += x * dt * dt;
        if let Some(cd) = cell_deaths.as_deref_mut() {
            cd[i] += died;
        }
    }
    flux.aged_out = next[n - 1] * dt;
    flux
}

/// Persons in the modelled range `[a_min, a_max)` for an age profile.
pub fn total_population(grid: &AgeTimeGrid, profile: &[f64]) -> f64 {
    profile[..grid.n_a() - 1].iter().sum::<f64>() * grid.step()
}

/// Persons per age bin `[e_k, e_{k+1})`, counting node `i` as the cohort
/// `[a_i, a_i + Δ)`.
pub fn age_profile_totals(
    grid: &AgeTimeGrid,
    profile: &[f64],
    age_edges: &[f64],
) -> Result<Vec<f64>> {
    let idx = age_edges
        .iter()
        .map(|&a| {
            grid.age_index(a).ok_or_else(|| Error::Misaligned {
                what: "age edge".into(),
                value: a,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(idx
        .windows(2)
        .map(|w| profile[w[0]..w[1]].iter().sum::<f64>() * grid.step())
        .collect())
}

pub fn simulate_population(inputs: &DemographicInputs, grid: &AgeTimeGrid) -> Result<Field> {
    inputs.validate(grid)?;
    let drivers = &inputs.drivers;
    let mut u = Field::zeros(*grid);
    u.at_time_mut(0)
        .copy_from_slice(&drivers.initial_population);
    let mut next = vec![0.0; grid.n_a()];
    for j in 0..grid.n_time_cells() {
        let birth = drivers.birth_density(grid, j)?;
        advance_step(
            grid,
            u.at_time(j),
            &mut next,
            inputs.hazard.at_time(j),
            drivers.immigration.at_time(j),
            birth,
            None,
        );
        u.at_time_mut(j + 1).copy_from_slice(&next);
    }
    debug_assert!(u.min_value() >= 0.0);
    Ok(u)
}

/// Result of advancing a population over a run of steps.
#[derive(Debug, Clone)]
pub struct WindowOutcome {
    pub population: Vec<f64>,
    /// Deaths per age cell, summed over the window (persons).
    pub cell_deaths: Vec<f64>,
    pub flux: StepFlux,
}

/// Advances `population` from time node `j0` to `j1` with an age-cell hazard
/// that is constant over the window.
pub fn advance_window(
    grid: &AgeTimeGrid,
    drivers: &PopulationDrivers,
    j0: usize,
    j1: usize,
    population: &[f64],
    hazard: &[f64],
) -> Result<WindowOutcome> {
    if hazard.len() != grid.n_age_cells() {
        return Err(Error::Dimension {
            what: "age-cell hazard".into(),
            expected: grid.n_age_cells(),
            actual: hazard.len(),
        });
    }
    if j1 > grid.n_time_cells() || j0 > j1 {
        return Err(Error::invalid(format!(
            "time window {j0}..{j1} outside grid ({} cells)",
            grid.n_time_cells()
        )));
    }
    let mut cur = population.to_vec();
    let mut next = vec![0.0; grid.n_a()];
    let mut cell_deaths = vec![0.0; grid.n_age_cells()];
    let mut flux = StepFlux::default();
    for j in j0..j1 {
        let birth = drivers.birth_density(grid, j)?;
        flux += advance_step(
            grid,
            &cur,
            &mut next,
            hazard,
            drivers.immigration.at_time(j),
            birth,
            Some(&mut cell_deaths),
        );
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(WindowOutcome {
        population: cur,
        cell_deaths,
        flux,
    })
}

/// Deaths (persons) per cell for a simulated field.
pub fn cell_deaths(u: &Field, inputs: &DemographicInputs) -> Result<CellField> {
    let grid = *u.grid();
    let mut out = CellField::zeros(grid);
    let mut scratch = vec![0.0; grid.n_a()];
    for j in 0..grid.n_time_cells() {
        let birth = inputs.drivers.birth_density(&grid, j)?;
        advance_step(
            &grid,
            u.at_time(j),
            &mut scratch,
            inputs.hazard.at_time(j),
            inputs.drivers.immigration.at_time(j),
            birth,
            Some(out.at_time_mut(j)),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YearBalance {
    pub year: i64,
    pub start_population: f64,
    pub end_population: f64,
    pub births: f64,
    pub immigration: f64,
    pub deaths: f64,
    pub aged_out: f64,
    /// Δpop − births − immigration + deaths + aged_out
    pub residual: f64,
}

impl YearBalance {
    pub fn relative_residual(&self) -> f64 {
        self.residual.abs()
            / self
                .start_population
                .max(self.end_population)
                .max(f64::MIN_POSITIVE)
    }
}

/// Per-calendar-year conservation ledger for a field produced by
/// [`simulate_population`] with the same inputs.
pub fn mass_balance_report(u: &Field, inputs: &DemographicInputs) -> Result<Vec<YearBalance>> {
    let grid = *u.grid();
    let mut out: Vec<YearBalance> = Vec::new();
    let mut scratch = vec![0.0; grid.n_a()];
    for j in 0..grid.n_time_cells() {
        let year = grid.time_mid(j).floor() as i64;
        let birth = inputs.drivers.birth_density(&grid, j)?;
        let flux = advance_step(
            &grid,
            u.at_time(j),
            &mut scratch,
            inputs.hazard.at_time(j),
            inputs.drivers.immigration.at_time(j),
            birth,
            None,
        );
        let end = total_population(&grid, u.at_time(j + 1));
        match out.last_mut() {
            Some(b) if b.year == year => {
                b.births += flux.births;
                b.immigration += flux.immigration;
                b.deaths += flux.deaths;
                b.aged_out += flux.aged_out;
                b.end_population = end;
            }
            _ => out.push(YearBalance {
                year,
                start_population: total_population(&grid, u.at_time(j)),
                end_population: end,
                births: flux.births,
                immigration: flux.immigration,
                deaths: flux.deaths,
                aged_out: flux.aged_out,
                residual: 0.0,
            }),
        }
    }
    for b in &mut out {
        b.residual = (b.end_population - b.start_population) - b.births - b.immigration
            + b.deaths
            + b.aged_out;
    }
    Ok(out)
}
