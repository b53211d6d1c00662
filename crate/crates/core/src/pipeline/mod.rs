//! Ensemble Monte Carlo over uncertain inputs.
//!
//! Every member draws its own census allocation, immigration age profiles
//! and onset kernel. The members are calibrated together by ensemble Kalman
//! inversion, then each is back-calculated on its own and the ensemble is
//! summarized by medians and 99% quantile bands.

mod aggregate;
mod corrections;
mod ensemble;
mod inputs;
mod member;
mod synthetic;

pub use aggregate::{
    aggregate, band, median, nearest_rank, AggregateEstimates, Band, StratumSeries, Surface,
    LOWER_P, UPPER_P,
};
pub use corrections::apply_reporting_corrections;
pub use ensemble::{
    backcalculate, calibrate, run_pipeline, sample_ensemble_inputs, select_beta, BackcalcOutput,
    BetaChoice, Calibration, LCurveGrid, PipelineInputs, PipelineSettings,
};
pub use inputs::{
    allocate_census, immigration_field, immigration_profile, sample_member_inputs, CensusBins,
    ImmigrationYear, InputSampling,
};
pub use member::{
    finish_member, member_system, onset_scheme, run_member, EnsembleRun, MemberSystem,
};
pub use synthetic::{
    convolve_deaths, generate_synthetic_scenario, SyntheticScenario, SyntheticTruth,
};
