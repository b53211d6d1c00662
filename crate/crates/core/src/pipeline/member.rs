use std::sync::Arc;

use crate::backcalc::{
    assemble_operator, build_regularizer, AssembledSystem, IncidenceSolution, TikhonovFactorization,
};
use crate::demography::{simulate_population, DemographicInputs, PopulationDrivers};
use crate::error::{Error, Result};
use crate::grid::{bin_field, AgeTimeGrid, BinnedCounts, BinningScheme, CellField, Field};
use crate::onset::{sample_kernel, KernelSamplerConfig, WeibullKernel};
use crate::streams::{member_rng, Purpose};

/// One member's chain from calibrated population to incidence rates.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub member_id: usize,
    pub kernel: WeibullKernel,
    pub drivers: Arc<PopulationDrivers>,
    pub hazard: CellField,
    pub population: Field,
    /// Person-years per basis bin (year-major), from this member's population.
    pub person_years: Vec<f64>,
    pub basis: BinningScheme,
    pub solution: IncidenceSolution,
}

/// Basis bins for onset: one-year ages from `onset_floor` to the top of the
/// grid, one per data year.
pub fn onset_scheme(
    grid: &AgeTimeGrid,
    deaths: &BinningScheme,
    onset_floor: f64,
) -> Result<BinningScheme> {
    if !(onset_floor >= grid.a_min() && onset_floor < grid.a_max()) {
        return Err(Error::Config(format!(
            "onset floor {onset_floor} lies outside the age range [{}, {})",
            grid.a_min(),
            grid.a_max()
        )));
    }
    let span = grid.a_max() - onset_floor;
    if span.fract() != 0.0 {
        return Err(Error::Config(format!(
            "onset floor {onset_floor} must be a whole number of years below {}",
            grid.a_max()
        )));
    }
    let ages: Vec<f64> = (0..=span as usize)
        .map(|i| onset_floor + i as f64)
        .collect();
    BinningScheme::new(ages, deaths.year_edges().to_vec())
}

/// Everything one member needs before choosing `β`.
#[derive(Debug, Clone)]
pub struct MemberSystem {
    pub kernel: WeibullKernel,
    pub population: Field,
    pub system: AssembledSystem,
}

/// Re-simulates the population under `hazard`, draws the member's onset
/// kernel and assembles the disease-death system.
#[allow(clippy::too_many_arguments)]
pub fn member_system(
    member_id: usize,
    grid: &AgeTimeGrid,
    drivers: &PopulationDrivers,
    hazard: &CellField,
    disease_deaths: &BinnedCounts,
    col_scheme: &BinningScheme,
    kernel_config: &KernelSamplerConfig,
    seed: u64,
) -> Result<MemberSystem> {
    let inner = || -> Result<MemberSystem> {
        let inputs = DemographicInputs {
            drivers: drivers.clone(),
            hazard: hazard.clone(),
        };
        let population = simulate_population(&inputs, grid)?;
        let kernel = sample_kernel(
            kernel_config,
            &mut member_rng(seed, Purpose::Kernel, member_id),
        )?;
        let weights = kernel.year_weights(kernel_config.horizon_years);
        let system = assemble_operator(&population, &weights, disease_deaths.scheme(), col_scheme)?
            .with_deaths(disease_deaths)?;
        Ok(MemberSystem {
            kernel,
            population,
            system,
        })
    };
    inner().map_err(|e| e.in_member(member_id))
}

/// Solves a member's system at `β` and packages the run.
pub fn finish_member(
    member_id: usize,
    drivers: Arc<PopulationDrivers>,
    hazard: CellField,
    ms: MemberSystem,
    beta: f64,
) -> Result<EnsembleRun> {
    let inner = || -> Result<EnsembleRun> {
        let cols = &ms.system.col_scheme;
        let reg = build_regularizer(cols.n_age_bins(), cols.n_year_bins(), beta)?;
        let solution = TikhonovFactorization::new(&ms.system, &reg)?.solve(beta)?;
        let person_years = bin_field(&ms.population, cols, None)?.as_slice().to_vec();
        Ok(EnsembleRun {
            member_id,
            kernel: ms.kernel,
            drivers,
            hazard,
            population: ms.population,
            person_years,
            basis: cols.clone(),
            solution,
        })
    };
    inner().map_err(|e| e.in_member(member_id))
}

/// The whole back-calculation chain for one calibrated member at fixed `β`.
#[allow(clippy::too_many_arguments)]
pub fn run_member(
    member_id: usize,
    grid: &AgeTimeGrid,
    drivers: Arc<PopulationDrivers>,
    hazard: CellField,
    disease_deaths: &BinnedCounts,
    col_scheme: &BinningScheme,
    kernel_config: &KernelSamplerConfig,
    beta: f64,
    seed: u64,
) -> Result<EnsembleRun> {
    let ms = member_system(
        member_id,
        grid,
        &drivers,
        &hazard,
        disease_deaths,
        col_scheme,
        kernel_config,
        seed,
    )?;
    finish_member(member_id, drivers, hazard, ms, beta)
}
