use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::BinnedCounts;

/// Multiplies the death counts of each listed calendar year by its factor.
pub fn apply_reporting_corrections(
    deaths: &BinnedCounts,
    corrections: &BTreeMap<i64, f64>,
) -> Result<BinnedCounts> {
    let mut out = deaths.clone();
    let edges = deaths.scheme().year_edges();
    for (&year, &factor) in corrections {
        if !(factor > 0.0 && factor <= 2.0) {
            return Err(Error::Config(format!(
                "correction factor for {year} must lie in (0, 2], got {factor}"
            )));
        }
        let j = edges[..edges.len() - 1]
            .iter()
            .position(|&e| e == year as f64)
            .ok_or_else(|| {
                Error::Config(format!(
                    "correction given for {year}, which is not a data year"
                ))
            })?;
        for v in out.year_column_mut(j) {
            *v *= factor;
        }
    }
    Ok(out)
}
