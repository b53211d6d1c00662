use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{BinnedCounts, BinningScheme, Field, ALIGN_TOL};

/// The discretized death-convolution system.
///
/// Rows are death bins stacked year-major (`j·K + k`), columns are incidence
/// basis bins stacked the same way (`s·K′ + r`).
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub a: DMatrix<f64>,
    pub d: Option<DVector<f64>>,
    pub row_scheme: BinningScheme,
    pub col_scheme: BinningScheme,
}

impl AssembledSystem {
    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.a.ncols()
    }

    pub fn row_index(&self, k: usize, j: usize) -> usize {
        j * self.row_scheme.n_age_bins() + k
    }

    pub fn col_index(&self, r: usize, s: usize) -> usize {
        s * self.col_scheme.n_age_bins() + r
    }

    /// Attaches observed deaths binned on the row scheme.
    pub fn with_deaths(mut self, deaths: &BinnedCounts) -> Result<Self> {
        if deaths.scheme() != &self.row_scheme {
            return Err(Error::invalid(
                "death counts are binned differently from the operator rows",
            ));
        }
        self.d = Some(DVector::from_column_slice(deaths.as_slice()));
        Ok(self)
    }

    pub fn deaths(&self) -> Result<&DVector<f64>> {
        self.d
            .as_ref()
            .ok_or_else(|| Error::invalid("system has no death counts attached"))
    }

    /// Largest |entry| coupling a death year to a later incidence year.
    pub fn max_future_entry(&self) -> f64 {
        let (k, kp) = (self.row_scheme.n_age_bins(), self.col_scheme.n_age_bins());
        let rows = self.row_scheme.year_edges();
        let cols = self.col_scheme.year_edges();
        let mut worst = 0.0f64;
        for j in 0..self.row_scheme.n_year_bins() {
            for s in 0..self.col_scheme.n_year_bins() {
                if cols[s] > rows[j] {
                    let block = self.a.view((j * k, s * kp), (k, kp));
                    worst = worst.max(block.amax());
                }
            }
        }
        worst
    }
}

fn unit_year_bins(what: &str, scheme: &BinningScheme) -> Result<()> {
    for w in scheme.year_edges().windows(2) {
        if ((w[1] - w[0]) - 1.0).abs() > ALIGN_TOL * w[1].abs().max(1.0) {
            return Err(Error::invalid(format!(
                "{what} year bins must be single calendar years, found [{}, {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Builds `A` from the population field `u` and year weights
/// `weights[i] = Γ_{i+1}`.
///
/// Each onset cell inside basis bin `(r, s)` contributes its person-years
/// (midpoint rule) times `Γ_{j−s+1}` to the death bin of year `j` whose age
/// interval contains the onset age advanced by `j − s` years. Deaths that
/// would land outside the row age range, or beyond the weight horizon, are
/// dropped.
pub fn assemble_operator(
    u: &Field,
    weights: &[f64],
    row_scheme: &BinningScheme,
    col_scheme: &BinningScheme,
) -> Result<AssembledSystem> {
    let grid = *u.grid();
    row_scheme.check_aligned(&grid)?;
    let col_age = col_scheme.cell_age_bins(&grid)?;
    let col_year = col_scheme.cell_year_bins(&grid)?;
    unit_year_bins("row scheme", row_scheme)?;
    unit_year_bins("basis", col_scheme)?;
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::invalid(format!(
            "kernel weight {w} is not a probability"
        )));
    }

    let (k_rows, j_rows) = (row_scheme.n_age_bins(), row_scheme.n_year_bins());
    let (k_cols, j_cols) = (col_scheme.n_age_bins(), col_scheme.n_year_bins());

    // elapsed whole years between each incidence year and each death year
    let offsets: Vec<Vec<Option<usize>>> = (0..j_cols)
        .map(|s| {
            let t_s = col_scheme.year_edges()[s];
            (0..j_rows)
                .map(|j| {
                    let off = row_scheme.year_edges()[j] - t_s;
                    let r = off.round();
                    if (off - r).abs() > ALIGN_TOL * off.abs().max(1.0) {
                        return Err(Error::invalid(format!(
                            "death year {} and incidence year {t_s} are not a whole number of years apart",
                            row_scheme.year_edges()[j]
                        )));
                    }
                    Ok((r >= 0.0 && (r as usize) < weights.len()).then_some(r as usize))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let area = grid.cell_area();
    let n_rows = k_rows * j_rows;
    // one dense column block (n_rows × K′) per incidence year
    let blocks: Vec<DMatrix<f64>> = (0..j_cols)
        .into_par_iter()
        .map(|s| {
            let mut block = DMatrix::zeros(n_rows, k_cols);
            for (jt, ys) in col_year.iter().enumerate() {
                if *ys != Some(s) {
                    continue;
                }
                for (i, rb) in col_age.iter().enumerate() {
                    let Some(r) = *rb else { continue };
                    let person_years = u.cell_mean(i, jt) * area;
                    if person_years == 0.0 {
                        continue;
                    }
                    for (j, off) in offsets[s].iter().enumerate() {
                        let Some(off) = *off else { continue };
                        let death_age = grid.age_mid(i) + off as f64;
                        if let Some(k) = row_scheme.age_bin_of(death_age) {
                            block[(j * k_rows + k, r)] += weights[off] * person_years;
                        }
                    }
                }
            }
            block
        })
        .collect();

    let mut a = DMatrix::zeros(n_rows, k_cols * j_cols);
    for (s, block) in blocks.into_iter().enumerate() {
        a.view_mut((0, s * k_cols), (n_rows, k_cols))
            .copy_from(&block);
    }
    Ok(AssembledSystem {
        a,
        d: None,
        row_scheme: row_scheme.clone(),
        col_scheme: col_scheme.clone(),
    })
}
