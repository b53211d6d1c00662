//! Reconstruction of age- and time-specific disease incidence from binned
//! mortality counts.
//!
//! The toolkit has two stages. An ensemble Kalman inversion calibrates the
//! all-cause mortality hazard of an age-structured population model against
//! observed deaths ([`eki`], driven by [`demography`]). Each calibrated
//! population member then feeds a regularized deconvolution that recovers
//! onset incidence from disease-specific deaths through a Weibull
//! onset-to-death delay ([`onset`], [`backcalc`]). [`pipeline`] runs the
//! Monte Carlo ensemble and aggregates quantile bands; [`io`] holds file
//! formats, configuration and the command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backcalc;
pub mod demography;
pub mod eki;

pub mod error;
pub mod grid;
pub mod io;

pub mod onset;
pub mod pipeline;

pub mod streams;

pub use error::{Error, Result};
pub use grid::{AgeTimeGrid, BinnedCounts, BinningScheme, CellField, Field};
