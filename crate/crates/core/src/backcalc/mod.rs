//! Back-calculation of onset incidence from disease-specific deaths.
//!
//! Deaths in age bin `k` and year `j` are a delayed convolution of past
//! onsets: an onset in basis bin `(r, s)` contributes with weight
//! `Γ_{j−s+1}` times the at-risk person-years of that bin, at an age advanced
//! by the elapsed years. Stacking years gives the block lower-triangular
//! system `Aλ = d`, solved with a second-difference smoothness penalty in age
//! applied independently to every incidence year:
//!
//! ```text
//! λ = argmin ‖Aλ − d‖² + β‖Rλ‖²,   RᵀR = I ⊗ L
//! ```

mod assembly;
mod lcurve;
mod regularizer;
mod solver;

pub use assembly::{assemble_operator, AssembledSystem};
pub use lcurve::{
    lcurve_from_factorization, lcurve_select, log_spaced, LCurvePoint, LCurveSelection,
};
pub use regularizer::{build_regularizer, IdentityPenalty, Penalty, Regularizer};
pub use solver::{
    operator_norm_sq, solve_tikhonov, IncidenceSolution, TikhonovFactorization, NORMAL_EQUATION_TOL,
};
