//! Files, configuration and the commands behind the executable.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;
pub mod tables;

pub use config::{BetaSetting, Overrides, RunConfig};
pub use manifest::{Manifest, MANIFEST_NAME};
pub use tables::{
    load_births_csv, load_deaths_csv, load_immigration_csv, load_lcurve_csv, load_population_csv,
    load_series_csv, load_surface_csv, DeathsKind,
};
