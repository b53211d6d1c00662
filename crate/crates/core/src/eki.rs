//! Sequential ensemble Kalman inversion of the mortality hazard.
//!
//! Each member carries a log-hazard vector over the age cells and its own
//! population state. For every observed year the members are run forward
//! over that year, their predicted binned deaths are compared with the
//! observation, and the log-hazards receive the perturbed-observation update
//!
//! ```text
//! θ_i ← θ_i + C_θy (C_yy + R)⁻¹ (y_obs + ε_i − y_i),   ε_i ~ N(0, R)
//! ```
//!
//! with sample covariances normalized by `N_e − 1`. Members then advance
//! their population through the year with the updated hazard, so the
//! posterior is a staircase in time with one age profile per year.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demography::{
    advance_window, cell_deaths, simulate_population, DemographicInputs, PopulationDrivers,
};
use crate::error::{Error, Result};
use crate::grid::{bin_cells, AgeTimeGrid, BinnedCounts, BinningScheme, CellField};
use crate::streams::{member_rng, Purpose};

pub const DEFAULT_NOISE_FLOOR: f64 = 25.0;

/// Observation error model: independent bins with variance `max(y, floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    scheme: BinningScheme,
    noise_floor: f64,
}

impl ObservationModel {
    pub fn new(scheme: BinningScheme) -> Self {
        Self {
            scheme,
            noise_floor: DEFAULT_NOISE_FLOOR,
        }
    }

    pub fn with_noise_floor(scheme: BinningScheme, noise_floor: f64) -> Result<Self> {
        if !(noise_floor.is_finite() && noise_floor > 0.0) {
            return Err(Error::Config(format!(
                "noise floor must be positive, got {noise_floor}"
            )));
        }
        Ok(Self {
            scheme,
            noise_floor,
        })
    }

    pub fn scheme(&self) -> &BinningScheme {
        &self.scheme
    }

    pub fn noise_floor(&self) -> f64 {
        self.noise_floor
    }

    pub fn variances(&self, y_obs: &[f64]) -> Vec<f64> {
        y_obs.iter().map(|&y| y.max(self.noise_floor)).collect()
    }
}

/// Gompertz–Makeham centre times a log-normal Gaussian-process perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HazardPrior {
    pub makeham: f64,
    pub gompertz_level: f64,
    pub gompertz_length: f64,
    pub gp_std: f64,
    pub gp_length: f64,
}

impl Default for HazardPrior {
    fn default() -> Self {
        Self {
            makeham: 1e-4,
            gompertz_level: 3e-5,
            gompertz_length: 10.5,
            gp_std: 0.3,
            gp_length: 10.0,
        }
    }
}

impl HazardPrior {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(self.makeham >= 0.0 && pos(self.gompertz_level) && pos(self.gompertz_length)) {
            return Err(Error::Config(
                "hazard prior centre parameters must be positive".into(),
            ));
        }
        if !(self.gp_std.is_finite() && self.gp_std >= 0.0 && pos(self.gp_length)) {
            return Err(Error::Config(
                "hazard prior GP needs std ≥ 0 and a positive length".into(),
            ));
        }
        Ok(())
    }

    /// `m(a) = c + b·exp(a/ℓ)`, 1/year.
    pub fn center(&self, age: f64) -> f64 {
        self.makeham + self.gompertz_level * (age / self.gompertz_length).exp()
    }

    pub fn sampler(&self, grid: &AgeTimeGrid) -> Result<PriorSampler> {
        self.validate()?;
        let ages: Vec<f64> = (0..grid.n_age_cells()).map(|i| grid.age_mid(i)).collect();
        let n = ages.len();
        let mean: Vec<f64> = ages.iter().map(|&a| self.center(a).ln()).collect();
        let var = self.gp_std * self.gp_std;
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let d = (ages[i] - ages[j]) / self.gp_length;
            var * (-0.5 * d * d).exp()
        });
        // the squared-exponential kernel is numerically rank deficient, so
        // factor through the eigenbasis and drop the rounding negatives
        let eig = SymmetricEigen::new(cov);
        let mut factor = eig.eigenvectors;
        for (k, lam) in eig.eigenvalues.iter().enumerate() {
            let s = lam.max(0.0).sqrt();
            factor.column_mut(k).scale_mut(s);
        }
        Ok(PriorSampler { mean, factor })
    }
}

/// Draws log-hazard vectors over the age cells.
#[derive(Debug, Clone)]
pub struct PriorSampler {
    mean: Vec<f64>,
    factor: DMatrix<f64>,
}

impl PriorSampler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let x = &self.factor * z;
        self.mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
    }
}

/// Deaths per observation age bin over one window of steps.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub deaths: Vec<f64>,
    /// Population at the end of the window.
    pub population: Vec<f64>,
}

/// Runs one member over steps `window.0..window.1` with hazard
/// `exp(log_hazard)` held constant and bins the deaths by age.
pub fn forward_observe(
    grid: &AgeTimeGrid,
    drivers: &PopulationDrivers,
    population: &[f64],
    log_hazard: &[f64],
    window: (usize, usize),
    cell_bins: &[Option<usize>],
    n_bins: usize,
) -> Result<Prediction> {
    let hazard: Vec<f64> = log_hazard.iter().map(|v| v.exp()).collect();
    let out = advance_window(grid, drivers, window.0, window.1, population, &hazard)?;
    let mut deaths = vec![0.0; n_bins];
    for (d, b) in out.cell_deaths.iter().zip(cell_bins) {
        if let Some(k) = b {
            deaths[*k] += d;
        }
    }
    Ok(Prediction {
        deaths,
        population: out.population,
    })
}

fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn anomalies(rows: &[Vec<f64>], mean: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(mean.len(), rows.len(), |i, k| rows[k][i] - mean[i])
}

/// The perturbed-observation Kalman update applied to every member.
///
/// `params[i]` is member `i`'s state, `predictions[i]` its predicted
/// observation and `perturbations[i]` its draw from `N(0, R)`.
pub fn kalman_update(
    params: &[Vec<f64>],
    predictions: &[Vec<f64>],
    y_obs: &[f64],
    variances: &[f64],
    perturbations: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let ne = params.len();
    if ne < 2 {
        return Err(Error::invalid(format!(
            "ensemble needs at least 2 members, got {ne}"
        )));
    }
    if predictions.len() != ne || perturbations.len() != ne {
        return Err(Error::Dimension {
            what: "ensemble members".into(),
            expected: ne,
            actual: predictions.len().min(perturbations.len()),
        });
    }
    let p = y_obs.len();
    for v in predictions
        .iter()
        .chain(perturbations)
        .map(Vec::len)
        .chain([variances.len()])
    {
        if v != p {
            return Err(Error::Dimension {
                what: "observation vector".into(),
                expected: p,
                actual: v,
            });
        }
    }
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::invalid(format!(
            "observation variance {v} is not positive"
        )));
    }

    let theta_mean = mean_of(params);
    let y_mean = mean_of(predictions);
    let dtheta = anomalies(params, &theta_mean);
    let dy = anomalies(predictions, &y_mean);
    if dy.amax() == 0.0 {
        log::warn!("ensemble predictions have collapsed; skipping update");
        return Ok(params.to_vec());
    }
    let scale = 1.0 / (ne as f64 - 1.0);
    let c_ty = &dtheta * dy.transpose() * scale;
    let mut c_yy = &dy * dy.transpose() * scale;
    for (i, v) in variances.iter().enumerate() {
        c_yy[(i, i)] += v;
    }
    let chol = c_yy
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;

    let updated = (0..ne)
        .map(|i| {
            let innov =
                DVector::from_fn(p, |k, _| y_obs[k] + perturbations[i][k] - predictions[i][k]);
            let w = chol.solve(&innov);
            let delta = &c_ty * w;
            params[i]
                .iter()
                .zip(delta.iter())
                .map(|(a, b)| a + b)
                .collect()
        })
        .collect();
    Ok(updated)
}

#[derive(Debug, Clone)]
struct Member {
    log_hazard: Vec<f64>,
    population: Vec<f64>,
    drivers: Arc<PopulationDrivers>,
    rng: ChaCha8Rng,
}

/// What one assimilation step saw and produced.
#[derive(Debug, Clone, PartialEq)]
pub struct AssimilatedYear {
    pub window: (usize, usize),
    pub observed: Vec<f64>,
    pub prior_predictions: Vec<Vec<f64>>,
    /// Deaths of the year re-run with each member's updated hazard.
    pub posterior_predictions: Vec<Vec<f64>>,
    pub log_hazards: Vec<Vec<f64>>,
}

impl AssimilatedYear {
    /// Ensemble mean of `‖y_obs − y_i‖²` before the update.
    pub fn mean_sq_innovation(&self) -> f64 {
        let n = self.prior_predictions.len() as f64;
        self.prior_predictions
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&self.observed)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    pub fn posterior_mean_prediction(&self) -> Vec<f64> {
        mean_of(&self.posterior_predictions)
    }

    pub fn mean_log_hazard(&self) -> Vec<f64> {
        mean_of(&self.log_hazards)
    }
}

#[derive(Debug, Clone)]
pub struct EkiState {
    grid: AgeTimeGrid,
    obs: ObservationModel,
    cell_bins: Vec<Option<usize>>,
    windows: Vec<(usize, usize)>,
    members: Vec<Member>,
    step_index: usize,
    history: Vec<AssimilatedYear>,
}

impl EkiState {
    /// `drivers` holds one entry per member, or a single entry shared by
    /// all; perturbation streams are keyed by `seed`.
    pub fn new(
        grid: AgeTimeGrid,
        obs: ObservationModel,
        drivers: Vec<Arc<PopulationDrivers>>,
        log_hazards: Vec<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let ne = log_hazards.len();
        if ne < 2 {
            return Err(Error::invalid(format!(
                "ensemble needs at least 2 members, got {ne}"
            )));
        }
        if drivers.len() != ne && drivers.len() != 1 {
            return Err(Error::Dimension {
                what: "member drivers".into(),
                expected: ne,
                actual: drivers.len(),
            });
        }
        for h in &log_hazards {
            if h.len() != grid.n_age_cells() {
                return Err(Error::Dimension {
                    what: "member log-hazard".into(),
                    expected: grid.n_age_cells(),
                    actual: h.len(),
                });
            }
            if h.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::NonFinite {
                    what: "member log-hazard".into(),
                    location: "initial ensemble".into(),
                });
            }
        }
        for d in &drivers {
            d.validate(&grid)?;
        }
        let cell_bins = obs.scheme.cell_age_bins(&grid)?;
        let (_, years) = obs.scheme.node_indices(&grid)?;
        let windows = years.windows(2).map(|w| (w[0], w[1])).collect();
        let members = log_hazards
            .into_iter()
            .enumerate()
            .map(|(i, log_hazard)| {
                let drv = Arc::clone(&drivers[if drivers.len() == 1 { 0 } else { i }]);
                Member {
                    log_hazard,
                    population: drv.initial_population.clone(),
                    drivers: drv,
                    rng: member_rng(seed, Purpose::Perturbation, i),
                }
            })
            .collect();
        Ok(Self {
            grid,
            obs,
            cell_bins,
            windows,
            members,
            step_index: 0,
            history: Vec::new(),
        })
    }

    pub fn grid(&self) -> &AgeTimeGrid {
        &self.grid
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn n_steps(&self) -> usize {
        self.windows.len()
    }

    pub fn log_hazards(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.log_hazard.clone()).collect()
    }

    pub fn populations(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.population.clone()).collect()
    }

    pub fn history(&self) -> &[AssimilatedYear] {
        &self.history
    }

    fn predict(&self, window: (usize, usize)) -> Result<Vec<Prediction>> {
        let n_bins = self.obs.scheme.n_age_bins();
        self.members
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                forward_observe(
                    &self.grid,
                    &m.drivers,
                    &m.population,
                    &m.log_hazard,
                    window,
                    &self.cell_bins,
                    n_bins,
                )
                .map_err(|e| e.in_member(i))
            })
            .collect()
    }

    fn draw_perturbations(&mut self, variances: &[f64]) -> Vec<Vec<f64>> {
        self.members
            .iter_mut()
            .map(|m| {
                variances
                    .iter()
                    .map(|v| {
                        let z: f64 = StandardNormal.sample(&mut m.rng);
                        z * v.sqrt()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Assimilates the next observed year, drawing perturbations from each
/// member's stream.
pub fn eki_step(state: EkiState, y_obs: &[f64]) -> Result<EkiState> {
    step(state, y_obs, None)
}

/// As [`eki_step`] with caller-supplied perturbations.
pub fn eki_step_with_perturbations(
    state: EkiState,
    y_obs: &[f64],
    perturbations: &[Vec<f64>],
) -> Result<EkiState> {
    step(state, y_obs, Some(perturbations))
}

fn step(mut state: EkiState, y_obs: &[f64], forced: Option<&[Vec<f64>]>) -> Result<EkiState> {
    let j = state.step_index;
    let Some(&window) = state.windows.get(j) else {
        return Err(Error::invalid(format!(
            "all {} observation years are already assimilated",
            state.windows.len()
        )));
    };
    let n_bins = state.obs.scheme.n_age_bins();
    if y_obs.len() != n_bins {
        return Err(Error::Dimension {
            what: "observed deaths".into(),
            expected: n_bins,
            actual: y_obs.len(),
        });
    }
    let variances = state.obs.variances(y_obs);
    let eps = match forced {
        Some(e) => e.to_vec(),
        None => state.draw_perturbations(&variances),
    };

    let prior = state.predict(window)?;
    let prior_predictions: Vec<Vec<f64>> = prior.into_iter().map(|p| p.deaths).collect();
    let params = state.log_hazards();
    let updated = kalman_update(&params, &prior_predictions, y_obs, &variances, &eps)?;
    for (m, h) in state.members.iter_mut().zip(updated) {
        m.log_hazard = h;
    }

    let post = state.predict(window)?;
    let mut posterior_predictions = Vec::with_capacity(post.len());
    for (m, p) in state.members.iter_mut().zip(post) {
        m.population = p.population;
        posterior_predictions.push(p.deaths);
    }
    state.history.push(AssimilatedYear {
        window,
        observed: y_obs.to_vec(),
        prior_predictions,
        posterior_predictions,
        log_hazards: state.log_hazards(),
    });
    state.step_index += 1;
    Ok(state)
}

/// Calibrated ensemble: one log-hazard age profile per member and year.
#[derive(Debug, Clone)]
pub struct EkiPosterior {
    grid: AgeTimeGrid,
    history: Vec<AssimilatedYear>,
}

impl EkiPosterior {
    pub fn grid(&self) -> &AgeTimeGrid {
        &self.grid
    }

    pub fn years(&self) -> &[AssimilatedYear] {
        &self.history
    }

    pub fn ensemble_size(&self) -> usize {
        self.history[0].log_hazards.len()
    }

    /// Member `i`'s hazard as a per-year staircase in time.
    pub fn hazard_field(&self, member: usize) -> CellField {
        let mut f = CellField::zeros(self.grid);
        for y in &self.history {
            let mu: Vec<f64> = y.log_hazards[member].iter().map(|v| v.exp()).collect();
            for j in y.window.0..y.window.1 {
                f.at_time_mut(j).copy_from_slice(&mu);
            }
        }
        f
    }

    /// Member `i`'s hazard after the last assimilated year, held for the
    /// whole window.
    pub fn final_hazard_field(&self, member: usize) -> CellField {
        let last = self
            .history
            .last()
            .expect("posterior has at least one year");
        let mu: Vec<f64> = last.log_hazards[member].iter().map(|v| v.exp()).collect();
        let mut f = CellField::zeros(self.grid);
        for j in 0..self.grid.n_time_cells() {
            f.at_time_mut(j).copy_from_slice(&mu);
        }
        f
    }

    /// Ensemble-mean squared innovation per assimilated year.
    pub fn innovations(&self) -> Vec<f64> {
        self.history
            .iter()
            .map(AssimilatedYear::mean_sq_innovation)
            .collect()
    }
}

/// Deaths binned on `scheme` for a population run with `hazard`.
pub fn predicted_deaths(
    grid: &AgeTimeGrid,
    drivers: &PopulationDrivers,
    hazard: &CellField,
    scheme: &BinningScheme,
) -> Result<BinnedCounts> {
    let inputs = DemographicInputs {
        drivers: drivers.clone(),
        hazard: hazard.clone(),
    };
    let u = simulate_population(&inputs, grid)?;
    let deaths = cell_deaths(&u, &inputs)?;
    let area = grid.cell_area();
    bin_cells(grid, scheme, |i, j| deaths.get(i, j) / area)
}

/// Checks that the year bins of `scheme` tile the time axis of `grid`.
pub fn check_tiles_time(grid: &AgeTimeGrid, scheme: &BinningScheme) -> Result<()> {
    let (_, years) = scheme.node_indices(grid)?;
    if years[0] != 0 || *years.last().unwrap() != grid.n_t() - 1 {
        return Err(Error::invalid(format!(
            "death years [{}, {}] must span the simulation window [{}, {}]",
            scheme.year_edges()[0],
            scheme.year_edges().last().unwrap(),
            grid.t_min(),
            grid.t_max()
        )));
    }
    Ok(())
}

/// Draws `n_members` prior log-hazards, member `i` from its own stream.
pub fn sample_prior_ensemble(sampler: &PriorSampler, n_members: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n_members)
        .into_par_iter()
        .map(|i| sampler.sample(&mut member_rng(seed, Purpose::Prior, i)))
        .collect()
}

/// Algorithm driver: prior draw, then one [`eki_step`] per observed year.
pub fn run_eki(
    grid: &AgeTimeGrid,
    deaths: &BinnedCounts,
    drivers: Vec<Arc<PopulationDrivers>>,
    prior: &HazardPrior,
    obs: &ObservationModel,
    n_members: usize,
    seed: u64,
) -> Result<EkiPosterior> {
    if deaths.scheme() != obs.scheme() {
        return Err(Error::invalid(
            "death counts are binned differently from the observation model",
        ));
    }
    check_tiles_time(grid, deaths.scheme())?;
    let sampler = prior.sampler(grid)?;
    let initial = sample_prior_ensemble(&sampler, n_members, seed);
    let mut state = EkiState::new(*grid, obs.clone(), drivers, initial, seed)?;
    for j in 0..deaths.scheme().n_year_bins() {
        state = eki_step(state, deaths.year_column(j))?;
        log::debug!(
            "assimilated year {}: mean squared innovation {:.4e}",
            deaths.scheme().year_edges()[j],
            state.history.last().unwrap().mean_sq_innovation()
        );
    }
    Ok(EkiPosterior {
        grid: *grid,
        history: state.history,
    })
}
