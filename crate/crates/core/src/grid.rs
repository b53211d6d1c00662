//! The (age, time) lattice, fields sampled on it, and age × year binning.
//!
//! Age and time share a single step so that the transport operator
//! `∂t + ∂a` moves mass exactly one node along each axis per step.
//! Node `(i, j)` sits at age `a_min + i·step`, time `t_min + j·step`;
//! cell `(i, j)` is the square with that node as its lower-left corner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for "lies on a node" and "is a whole number of steps".
pub const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeTimeGrid {
    a_min: f64,
    a_max: f64,
    t_min: f64,
    t_max: f64,
    step: f64,
    n_a: usize,
    n_t: usize,
}

fn node_count(axis: &'static str, lo: f64, hi: f64, step: f64) -> Result<usize> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidGrid {
            axis,
            reason: "bounds must be finite".into(),
        });
    }
    if hi <= lo {
        return Err(Error::InvalidGrid {
            axis,
            reason: format!("upper bound {hi} must exceed lower bound {lo}"),
        });
    }
    let q = (hi - lo) / step;
    let r = q.round();
    if (q - r).abs() > ALIGN_TOL * q.max(1.0) || r < 1.0 {
        return Err(Error::InvalidGrid {
            axis,
            reason: format!("span {} is not an integer multiple of step {step}", hi - lo),
        });
    }
    Ok(r as usize + 1)
}

impl AgeTimeGrid {
    pub fn new(a_min: f64, a_max: f64, t_min: f64, t_max: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidGrid {
                axis: "step",
                reason: format!("step must be positive, got {step}"),
            });
        }
        let n_a = node_count("age", a_min, a_max, step)?;
        let n_t = node_count("time", t_min, t_max, step)?;
        Ok(Self {
            a_min,
            a_max,
            t_min,
            t_max,
            step,
            n_a,
            n_t,
        })
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }
    pub fn a_max(&self) -> f64 {
        self.a_max
    }
    pub fn t_min(&self) -> f64 {
        self.t_min
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn n_a(&self) -> usize {
        self.n_a
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn n_age_cells(&self) -> usize {
        self.n_a - 1
    }
    pub fn n_time_cells(&self) -> usize {
        self.n_t - 1
    }
    pub fn cell_area(&self) -> f64 {
        self.step * self.step
    }

    pub fn age(&self, i: usize) -> f64 {
        self.a_min + i as f64 * self.step
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t_min + j as f64 * self.step
    }

    pub fn age_mid(&self, i: usize) -> f64 {
        self.a_min + (i as f64 + 0.5) * self.step
    }

    pub fn time_mid(&self, j: usize) -> f64 {
        self.t_min + (j as f64 + 0.5) * self.step
    }

    pub fn ages(&self) -> Vec<f64> {
        (0..self.n_a).map(|i| self.age(i)).collect()
    }

    fn snap(origin: f64, step: f64, count: usize, x: f64) -> Option<usize> {
        let q = (x - origin) / step;
        let r = q.round();
        if (q - r).abs() <= ALIGN_TOL * q.abs().max(1.0) && r >= 0.0 && (r as usize) < count {
            Some(r as usize)
        } else {
            None
        }
    }

    /// Index of the age node at `a`, if `a` is a node.
    pub fn age_index(&self, a: f64) -> Option<usize> {
        Self::snap(self.a_min, self.step, self.n_a, a)
    }

    /// Index of the time node at `t`, if `t` is a node.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        Self::snap(self.t_min, self.step, self.n_t, t)
    }

    /// Number of steps in one unit of time, when that is a whole number.
    pub fn steps_per_year(&self) -> Option<usize> {
        let q = 1.0 / self.step;
        let r = q.round();
        ((q - r).abs() <= ALIGN_TOL * q.max(1.0) && r >= 1.0).then_some(r as usize)
    }
}

/// Values stored at the nodes of a grid, time-major: the age profile at a
/// given time node is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: AgeTimeGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: AgeTimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_a * grid.n_t],
        }
    }

    pub fn from_fn(grid: AgeTimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_a * grid.n_t);
        for j in 0..grid.n_t {
            let t = grid.time(j);
            values.extend((0..grid.n_a).map(|i| f(grid.age(i), t)));
        }
        Self { grid, values }
    }

    pub fn from_values(grid: AgeTimeGrid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.n_a * grid.n_t;
        if values.len() != expected {
            return Err(Error::Dimension {
                what: "node field".into(),
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &AgeTimeGrid {
        &self.grid
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.n_a + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[j * self.grid.n_a + i] = v;
    }

    /// Age profile at time node `j`.
    pub fn at_time(&self, j: usize) -> &[f64] {
        let n = self.grid.n_a;
        &self.values[j * n..(j + 1) * n]
    }

    pub fn at_time_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.grid.n_a;
        &mut self.values[j * n..(j + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Midpoint value of cell `(i, j)`: the mean of its four corners.
    pub fn cell_mean(&self, i: usize, j: usize) -> f64 {
        0.25 * (self.get(i, j) + self.get(i + 1, j) + self.get(i, j + 1) + self.get(i + 1, j + 1))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First non-finite node, reported as `(i, j)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        let n = self.grid.n_a;
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p % n, p / n))
    }
}

/// Values held at cell centres, time-major, `(n_a − 1) × (n_t − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: AgeTimeGrid,
    values: Vec<f64>,
}

impl CellField {
    pub fn constant(grid: AgeTimeGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_age_cells() * grid.n_time_cells()],
        }
    }

    pub fn zeros(grid: AgeTimeGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at every cell midpoint.
    pub fn from_fn(grid: AgeTimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_age_cells() * grid.n_time_cells());
        for j in 0..grid.n_time_cells() {
            let t = grid.time_mid(j);
            values.extend((0..grid.n_age_cells()).map(|i| f(grid.age_mid(i), t)));
        }
        Self { grid, values }
    }

    pub fn from_node_field(field: &Field) -> Self {
        let grid = *field.grid();
        let mut values = Vec::with_capacity(grid.n_age_cells() * grid.n_time_cells());
        for j in 0..grid.n_time_cells() {
            values.extend((0..grid.n_age_cells()).map(|i| field.cell_mean(i, j)));
        }
        Self { grid, values }
    }

    pub fn from_values(grid: AgeTimeGrid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.n_age_cells() * grid.n_time_cells();
        if values.len() != expected {
            return Err(Error::Dimension {
                what: "cell field".into(),
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &AgeTimeGrid {
        &self.grid
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.n_age_cells() + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.grid.n_age_cells();
        self.values[j * n + i] = v;
    }

    /// Age-cell values during time cell `j`.
    pub fn at_time(&self, j: usize) -> &[f64] {
        let n = self.grid.n_age_cells();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn at_time_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.grid.n_age_cells();
        &mut self.values[j * n..(j + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        let n = self.grid.n_age_cells();
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p % n, p / n))
    }

    pub fn first_negative(&self) -> Option<(usize, usize, f64)> {
        let n = self.grid.n_age_cells();
        self.values
            .iter()
            .position(|v| *v < 0.0)
            .map(|p| (p % n, p / n, self.values[p]))
    }
}

/// Anything that can be integrated cell by cell with the midpoint rule.
pub trait CellIntegrand {
    fn grid(&self) -> &AgeTimeGrid;
    fn cell_value(&self, i: usize, j: usize) -> f64;
}

impl CellIntegrand for Field {
    fn grid(&self) -> &AgeTimeGrid {
        &self.grid
    }
    fn cell_value(&self, i: usize, j: usize) -> f64 {
        self.cell_mean(i, j)
    }
}

impl CellIntegrand for CellField {
    fn grid(&self) -> &AgeTimeGrid {
        &self.grid
    }
    fn cell_value(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

/// Half-open age × year bins `[a_k, a_{k+1}) × [t_j, t_{j+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    age_edges: Vec<f64>,
    year_edges: Vec<f64>,
}

fn check_edges(axis: &str, edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::invalid(format!(
            "{axis} edges need at least 2 entries, got {}",
            edges.len()
        )));
    }
    if let Some(bad) = edges.iter().find(|e| !e.is_finite()) {
        return Err(Error::invalid(format!("{axis} edge {bad} is not finite")));
    }
    if let Some(w) = edges.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "{axis} edges must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl BinningScheme {
    pub fn new(age_edges: Vec<f64>, year_edges: Vec<f64>) -> Result<Self> {
        check_edges("age", &age_edges)?;
        check_edges("year", &year_edges)?;
        Ok(Self {
            age_edges,
            year_edges,
        })
    }

    /// Uniform bins of width `age_width` over `[a_lo, a_hi)` and of width
    /// `year_width` over `[t_lo, t_hi)`.
    pub fn uniform(
        a_lo: f64,
        a_hi: f64,
        age_width: f64,
        t_lo: f64,
        t_hi: f64,
        year_width: f64,
    ) -> Result<Self> {
        let edges = |lo: f64, hi: f64, w: f64, axis: &str| -> Result<Vec<f64>> {
            let q = (hi - lo) / w;
            let n = q.round();
            if !(w > 0.0) || (q - n).abs() > ALIGN_TOL * q.max(1.0) || n < 1.0 {
                return Err(Error::invalid(format!(
                    "{axis} range [{lo}, {hi}) is not a whole number of {w}-wide bins"
                )));
            }
            Ok((0..=n as usize).map(|k| lo + k as f64 * w).collect())
        };
        Self::new(
            edges(a_lo, a_hi, age_width, "age")?,
            edges(t_lo, t_hi, year_width, "year")?,
        )
    }

    pub fn age_edges(&self) -> &[f64] {
        &self.age_edges
    }
    pub fn year_edges(&self) -> &[f64] {
        &self.year_edges
    }
    pub fn n_age_bins(&self) -> usize {
        self.age_edges.len() - 1
    }
    pub fn n_year_bins(&self) -> usize {
        self.year_edges.len() - 1
    }
    pub fn n_bins(&self) -> usize {
        self.n_age_bins() * self.n_year_bins()
    }

    /// Bin containing age `a`; the last bin also takes its upper edge.
    pub fn age_bin_of(&self, a: f64) -> Option<usize> {
        bin_of(&self.age_edges, a)
    }

    pub fn year_bin_of(&self, t: f64) -> Option<usize> {
        bin_of(&self.year_edges, t)
    }

    /// Node indices of the age and year edges on `grid`.
    pub fn node_indices(&self, grid: &AgeTimeGrid) -> Result<(Vec<usize>, Vec<usize>)> {
        let ages = self
            .age_edges
            .iter()
            .map(|&a| {
                grid.age_index(a).ok_or_else(|| Error::Misaligned {
                    what: "age edge".into(),
                    value: a,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let years = self
            .year_edges
            .iter()
            .map(|&t| {
                grid.time_index(t).ok_or_else(|| Error::Misaligned {
                    what: "year edge".into(),
                    value: t,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((ages, years))
    }

    pub fn check_aligned(&self, grid: &AgeTimeGrid) -> Result<()> {
        self.node_indices(grid).map(|_| ())
    }

    /// Per age cell of `grid`, the age bin that contains it.
    pub fn cell_age_bins(&self, grid: &AgeTimeGrid) -> Result<Vec<Option<usize>>> {
        let (ages, _) = self.node_indices(grid)?;
        Ok(cells_to_bins(&ages, grid.n_age_cells()))
    }

    /// Per time cell of `grid`, the year bin that contains it.
    pub fn cell_year_bins(&self, grid: &AgeTimeGrid) -> Result<Vec<Option<usize>>> {
        let (_, years) = self.node_indices(grid)?;
        Ok(cells_to_bins(&years, grid.n_time_cells()))
    }
}

fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    let last = *edges.last()?;
    if x < edges[0] || x > last {
        return None;
    }
    if x == last {
        return Some(edges.len() - 2);
    }
    // first edge strictly greater than x, minus one
    Some(edges.partition_point(|&e| e <= x) - 1)
}

fn cells_to_bins(edge_nodes: &[usize], n_cells: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; n_cells];
    for (k, w) in edge_nodes.windows(2).enumerate() {
        for slot in &mut out[w[0]..w[1]] {
            *slot = Some(k);
        }
    }
    out
}

/// Binned totals, stored year-major: entry `(k, j)` lives at `j·K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCounts {
    scheme: BinningScheme,
    counts: Vec<f64>,
}

impl BinnedCounts {
    /// Observed counts: finite and nonnegative.
    pub fn new(scheme: BinningScheme, counts: Vec<f64>) -> Result<Self> {
        let out = Self::from_raw(scheme, counts)?;
        for j in 0..out.scheme.n_year_bins() {
            for k in 0..out.scheme.n_age_bins() {
                let v = out.get(k, j);
                let location = format!(
                    "age bin [{}, {}), year bin [{}, {})",
                    out.scheme.age_edges[k],
                    out.scheme.age_edges[k + 1],
                    out.scheme.year_edges[j],
                    out.scheme.year_edges[j + 1]
                );
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: "binned counts".into(),
                        location,
                    });
                }
                if v < 0.0 {
                    return Err(Error::Negative {
                        what: "binned counts".into(),
                        location,
                        value: v,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Binned quantities of any sign (e.g. quadratures of signed fields).
    pub fn from_raw(scheme: BinningScheme, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != scheme.n_bins() {
            return Err(Error::Dimension {
                what: "binned counts".into(),
                expected: scheme.n_bins(),
                actual: counts.len(),
            });
        }
        Ok(Self { scheme, counts })
    }

    pub fn scheme(&self) -> &BinningScheme {
        &self.scheme
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.counts[j * self.scheme.n_age_bins() + k]
    }

    pub fn year_column(&self, j: usize) -> &[f64] {
        let n = self.scheme.n_age_bins();
        &self.counts[j * n..(j + 1) * n]
    }

    pub fn year_column_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.scheme.n_age_bins();
        &mut self.counts[j * n..(j + 1) * n]
    }

    /// Year-major stacking `(d_1; d_2; …; d_J)`.
    pub fn as_slice(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Midpoint-rule integral of `value(i, j)` over each bin of `scheme`.
/// Cells outside the scheme are ignored.
pub fn bin_cells(
    grid: &AgeTimeGrid,
    scheme: &BinningScheme,
    value: impl Fn(usize, usize) -> f64,
) -> Result<BinnedCounts> {
    let age_bins = scheme.cell_age_bins(grid)?;
    let year_bins = scheme.cell_year_bins(grid)?;
    let n_age = scheme.n_age_bins();
    let area = grid.cell_area();
    let mut counts = vec![0.0; scheme.n_bins()];
    for (j, yb) in year_bins.iter().enumerate() {
        let Some(yb) = *yb else { continue };
        for (i, ab) in age_bins.iter().enumerate() {
            if let Some(ab) = *ab {
                counts[yb * n_age + ab] += value(i, j) * area;
            }
        }
    }
    BinnedCounts::from_raw(scheme.clone(), counts)
}

/// Integrates `f` (or `f·weight`) over every bin of `scheme`.
pub fn bin_field(
    f: &dyn CellIntegrand,
    scheme: &BinningScheme,
    weight: Option<&dyn CellIntegrand>,
) -> Result<BinnedCounts> {
    let grid = *f.grid();
    match weight {
        None => bin_cells(&grid, scheme, |i, j| f.cell_value(i, j)),
        Some(w) => {
            if w.grid() != &grid {
                return Err(Error::invalid("weight field lives on a different grid"));
            }
            bin_cells(&grid, scheme, |i, j| {
                f.cell_value(i, j) * w.cell_value(i, j)
            })
        }
    }
}
