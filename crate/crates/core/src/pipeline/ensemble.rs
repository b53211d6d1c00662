use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backcalc::{
    build_regularizer, lcurve_from_factorization, log_spaced, LCurveSelection,
    TikhonovFactorization,
};
use crate::demography::{AnnualSeries, PopulationDrivers};
use crate::eki::{run_eki, EkiPosterior, HazardPrior, ObservationModel};
use crate::error::{Error, Result};
use crate::grid::{AgeTimeGrid, BinnedCounts, BinningScheme, CellField};
use crate::onset::KernelSamplerConfig;
use crate::streams::{member_rng, Purpose};

use super::aggregate::{aggregate, AggregateEstimates};
use super::corrections::apply_reporting_corrections;
use super::inputs::{sample_member_inputs, CensusBins, ImmigrationYear, InputSampling};
use super::member::{finish_member, member_system, onset_scheme, EnsembleRun};

/// Everything read from disk.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub grid: AgeTimeGrid,
    pub census: CensusBins,
    pub births: AnnualSeries,
    pub immigration: Vec<ImmigrationYear>,
    pub all_cause: BinnedCounts,
    pub disease_deaths: BinnedCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LCurveGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for LCurveGrid {
    fn default() -> Self {
        Self {
            lo: 1e-2,
            hi: 1e14,
            points: 65,
        }
    }
}

impl LCurveGrid {
    pub fn betas(&self) -> Result<Vec<f64>> {
        if self.points < 5 {
            return Err(Error::Config(format!(
                "L-curve grid needs at least 5 points, got {}",
                self.points
            )));
        }
        log_spaced(self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaChoice {
    Fixed(f64),
    LCurve(LCurveGrid),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub ensemble_size: usize,
    pub seed: u64,
    pub kernel: KernelSamplerConfig,
    pub prior: HazardPrior,
    pub noise_floor: f64,
    pub beta: BetaChoice,
    pub onset_floor: f64,
    pub corrections: BTreeMap<i64, f64>,
    pub sampling: InputSampling,
    pub clamp_negative: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            ensemble_size: 100,
            seed: 0,
            kernel: KernelSamplerConfig::default(),
            prior: HazardPrior::default(),
            noise_floor: crate::eki::DEFAULT_NOISE_FLOOR,
            beta: BetaChoice::Fixed(1e6),
            onset_floor: 40.0,
            corrections: BTreeMap::new(),
            sampling: InputSampling::default(),
            clamp_negative: true,
        }
    }
}

/// Calibrated ensemble of population members.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub drivers: Vec<Arc<PopulationDrivers>>,
    /// Posterior hazard per member, one year at a time.
    pub hazards: Vec<CellField>,
    /// Mean squared innovation per assimilated year; empty when the hazards
    /// were loaded rather than computed.
    pub innovations: Vec<f64>,
}

impl Calibration {
    pub fn ensemble_size(&self) -> usize {
        self.hazards.len()
    }

    pub fn from_posterior(drivers: Vec<Arc<PopulationDrivers>>, posterior: &EkiPosterior) -> Self {
        Self {
            hazards: (0..posterior.ensemble_size())
                .map(|i| posterior.hazard_field(i))
                .collect(),
            innovations: posterior.innovations(),
            drivers,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackcalcOutput {
    pub beta: f64,
    pub lcurve: Option<LCurveSelection>,
    pub runs: Vec<EnsembleRun>,
    pub estimates: AggregateEstimates,
}

/// Population drivers for every member, each from its own input stream.
pub fn sample_ensemble_inputs(
    inputs: &PipelineInputs,
    settings: &PipelineSettings,
) -> Result<Vec<Arc<PopulationDrivers>>> {
    let grid = &inputs.grid;
    if settings.ensemble_size < 2 {
        return Err(Error::Config(format!(
            "ensemble size must be at least 2, got {}",
            settings.ensemble_size
        )));
    }
    (0..settings.ensemble_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = member_rng(settings.seed, Purpose::Inputs, i);
            sample_member_inputs(
                grid,
                &inputs.census,
                &inputs.births,
                &inputs.immigration,
                &settings.sampling,
                &mut rng,
            )
            .map(Arc::new)
            .map_err(|e| e.in_member(i))
        })
        .collect()
}

/// Per-member input draws followed by one ensemble Kalman inversion over
/// the all-cause deaths.
pub fn calibrate(inputs: &PipelineInputs, settings: &PipelineSettings) -> Result<Calibration> {
    let grid = &inputs.grid;
    let drivers = sample_ensemble_inputs(inputs, settings)?;
    let obs = ObservationModel::with_noise_floor(
        inputs.all_cause.scheme().clone(),
        settings.noise_floor,
    )?;
    let posterior = run_eki(
        grid,
        &inputs.all_cause,
        drivers.clone(),
        &settings.prior,
        &obs,
        settings.ensemble_size,
        settings.seed,
    )?;
    Ok(Calibration::from_posterior(drivers, &posterior))
}

fn corrected_deaths(
    inputs: &PipelineInputs,
    settings: &PipelineSettings,
) -> Result<(BinnedCounts, BinningScheme)> {
    let deaths = apply_reporting_corrections(&inputs.disease_deaths, &settings.corrections)?;
    let cols = onset_scheme(&inputs.grid, deaths.scheme(), settings.onset_floor)?;
    Ok((deaths, cols))
}

/// L-curve over member 0's system.
pub fn select_beta(
    inputs: &PipelineInputs,
    settings: &PipelineSettings,
    calibration: &Calibration,
    grid_spec: &LCurveGrid,
) -> Result<LCurveSelection> {
    let (deaths, cols) = corrected_deaths(inputs, settings)?;
    let betas = grid_spec.betas()?;
    let ms = member_system(
        0,
        &inputs.grid,
        &calibration.drivers[0],
        &calibration.hazards[0],
        &deaths,
        &cols,
        &settings.kernel,
        settings.seed,
    )?;
    let reg = build_regularizer(cols.n_age_bins(), cols.n_year_bins(), betas[0])?;
    let fac = TikhonovFactorization::new(&ms.system, &reg)?;
    lcurve_from_factorization(&fac, &betas)
}

/// Back-calculates every calibrated member and aggregates.
pub fn backcalculate(
    inputs: &PipelineInputs,
    settings: &PipelineSettings,
    calibration: &Calibration,
) -> Result<BackcalcOutput> {
    let (deaths, cols) = corrected_deaths(inputs, settings)?;
    let (beta, lcurve) = match settings.beta {
        BetaChoice::Fixed(b) => (b, None),
        BetaChoice::LCurve(spec) => {
            let sel = select_beta(inputs, settings, calibration, &spec)?;
            if sel.low_confidence {
                log::warn!("L-curve corner is unreliable; using β = {:e}", sel.beta);
            }
            (sel.beta, Some(sel))
        }
    };
    let n = calibration.ensemble_size();
    if calibration.drivers.len() != n {
        return Err(Error::Dimension {
            what: "calibrated members".into(),
            expected: n,
            actual: calibration.drivers.len(),
        });
    }
    let runs: Vec<EnsembleRun> = (0..n)
        .into_par_iter()
        .map(|i| {
            let hazard = calibration.hazards[i].clone();
            let drivers = Arc::clone(&calibration.drivers[i]);
            let ms = member_system(
                i,
                &inputs.grid,
                &drivers,
                &hazard,
                &deaths,
                &cols,
                &settings.kernel,
                settings.seed,
            )?;
            finish_member(i, drivers, hazard, ms, beta)
        })
        .collect::<Result<_>>()?;
    let estimates = aggregate(&runs, settings.clamp_negative)?;
    Ok(BackcalcOutput {
        beta,
        lcurve,
        runs,
        estimates,
    })
}

/// Calibration, back-calculation and aggregation in one call.
pub fn run_pipeline(
    inputs: &PipelineInputs,
    settings: &PipelineSettings,
) -> Result<(Calibration, BackcalcOutput)> {
    let calibration = calibrate(inputs, settings)?;
    let out = backcalculate(inputs, settings, &calibration)?;
    Ok((calibration, out))
}
