//! CSV schemas for inputs and reports.
//!
//! Every loader names the offending file and line. Writers format numbers
//! with Rust's shortest round-trip representation, so a loaded report
//! writes back to the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use crate::backcalc::LCurvePoint;
use crate::demography::AnnualSeries;
use crate::error::{Error, Result};
use crate::grid::{BinnedCounts, BinningScheme};
use crate::pipeline::{Band, CensusBins, ImmigrationYear, StratumSeries, Surface};

pub const DEATHS_HEADER: [&str; 4] = ["year", "age_lo", "age_hi", "deaths"];
pub const POPULATION_HEADER: [&str; 3] = ["age_lo", "age_hi", "population"];
pub const BIRTHS_HEADER: [&str; 2] = ["year", "births"];
pub const IMMIGRATION_HEADER: [&str; 4] = ["year", "total", "shape", "scale"];
pub const SERIES_HEADER: [&str; 4] = ["year", "median", "lo99", "hi99"];
pub const SURFACE_HEADER: [&str; 6] = ["year", "age_lo", "age_hi", "median", "lo99", "hi99"];
pub const LCURVE_HEADER: [&str; 5] = ["beta", "residual_norm", "seminorm", "curvature", "selected"];
pub const CALIBRATION_HEADER: [&str; 5] = ["member", "year", "age_lo", "age_hi", "hazard"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeathsKind {
    AllCause,
    Disease,
}

impl DeathsKind {
    fn label(self) -> &'static str {
        match self {
            DeathsKind::AllCause => "all-cause deaths",
            DeathsKind::Disease => "disease deaths",
        }
    }
}

/// Parsed rows of one file, each with its line number.
struct Table<'p> {
    path: &'p Path,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl<'p> Table<'p> {
    fn read(path: &'p Path, header: &[&str]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &bytes, header)
    }

    fn parse(path: &'p Path, bytes: &[u8], header: &[&str]) -> Result<Self> {
        let csv_err = |row: usize, message: String| Error::Csv {
            path: path.to_path_buf(),
            row,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let found = reader
            .headers()
            .map_err(|e| csv_err(1, e.to_string()))?
            .clone();
        if found.iter().ne(header.iter().copied()) {
            return Err(csv_err(
                1,
                format!(
                    "expected header `{}`, found `{}`",
                    header.join(","),
                    found.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                csv_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec));
        }
        if rows.is_empty() {
            return Err(csv_err(1, "no data rows".into()));
        }
        Ok(Self { path, rows })
    }

    fn err(&self, row: usize, message: impl Into<String>) -> Error {
        Error::Csv {
            path: self.path.to_path_buf(),
            row,
            message: message.into(),
        }
    }

    fn float(&self, row: usize, rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64> {
        let v: f64 = rec[col]
            .parse()
            .map_err(|_| self.err(row, format!("{name} {:?} is not a number", &rec[col])))?;
        if !v.is_finite() {
            return Err(self.err(row, format!("{name} must be finite")));
        }
        Ok(v)
    }

    fn count(&self, row: usize, rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64> {
        let v = self.float(row, rec, col, name)?;
        if v < 0.0 {
            return Err(self.err(row, format!("{name} {v} is negative")));
        }
        Ok(v)
    }

    fn year(&self, row: usize, rec: &csv::StringRecord, col: usize) -> Result<i64> {
        rec[col]
            .parse()
            .map_err(|_| self.err(row, format!("year {:?} is not an integer", &rec[col])))
    }

    fn optional_float(
        &self,
        row: usize,
        rec: &csv::StringRecord,
        col: usize,
        name: &str,
    ) -> Result<Option<f64>> {
        if rec[col].is_empty() {
            Ok(None)
        } else {
            self.float(row, rec, col, name).map(Some)
        }
    }
}

/// Checks that `(lo, hi, line)` bins, sorted by `lo`, tile an interval.
fn contiguous_edges(
    table: &Table,
    what: &str,
    mut bins: Vec<(f64, f64, usize)>,
) -> Result<Vec<f64>> {
    bins.sort_by(|a, b| a.0.total_cmp(&b.0));
    for &(lo, hi, line) in &bins {
        if !(hi > lo) {
            return Err(table.err(line, format!("{what}: age_hi {hi} must exceed age_lo {lo}")));
        }
    }
    let mut edges = vec![bins[0].0];
    for w in bins.windows(2) {
        let ((_, hi, _), (lo, _, line)) = (w[0], w[1]);
        if lo > hi {
            return Err(table.err(line, format!("{what}: gap between ages {hi} and {lo}")));
        }
        if lo < hi {
            return Err(table.err(
                line,
                format!("{what}: bin starting at {lo} overlaps the bin ending at {hi}"),
            ));
        }
        edges.push(lo);
    }
    edges.push(bins.last().unwrap().1);
    Ok(edges)
}

fn consecutive_years(table: &Table, what: &str, years: &[(i64, usize)]) -> Result<()> {
    for w in years.windows(2) {
        if w[1].0 == w[0].0 {
            return Err(table.err(w[1].1, format!("{what}: year {} appears twice", w[1].0)));
        }
        if w[1].0 != w[0].0 + 1 {
            return Err(table.err(
                w[1].1,
                format!("{what}: years jump from {} to {}", w[0].0, w[1].0),
            ));
        }
    }
    Ok(())
}

fn parse_deaths(table: &Table, kind: DeathsKind) -> Result<BinnedCounts> {
    let what = kind.label();
    let mut by_year: BTreeMap<i64, Vec<(f64, f64, f64, usize)>> = BTreeMap::new();
    for (line, rec) in &table.rows {
        let year = table.year(*line, rec, 0)?;
        let lo = table.float(*line, rec, 1, "age_lo")?;
        let hi = table.float(*line, rec, 2, "age_hi")?;
        let d = table.count(*line, rec, 3, "deaths")?;
        by_year.entry(year).or_default().push((lo, hi, d, *line));
    }
    let years: Vec<(i64, usize)> = by_year.iter().map(|(y, r)| (*y, r[0].3)).collect();
    consecutive_years(table, what, &years)?;
    let mut edges: Option<Vec<f64>> = None;
    let mut counts = Vec::new();
    for (year, mut rows) in by_year {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let e = contiguous_edges(
            table,
            &format!("{what} {year}"),
            rows.iter().map(|r| (r.0, r.1, r.3)).collect(),
        )?;
        match &edges {
            None => edges = Some(e),
            Some(first) if *first != e => {
                return Err(table.err(
                    rows[0].3,
                    format!("{what}: age bins of {year} differ from those of the first year"),
                ))
            }
            _ => {}
        }
        counts.extend(rows.iter().map(|r| r.2));
    }
    let first = years[0].0;
    let year_edges: Vec<f64> = (0..=years.len() as i64)
        .map(|k| (first + k) as f64)
        .collect();
    let scheme = BinningScheme::new(edges.unwrap(), year_edges)?;
    BinnedCounts::new(scheme, counts)
}

/// Deaths by calendar year and age bin, `year,age_lo,age_hi,deaths`.
pub fn load_deaths_csv(path: &Path, kind: DeathsKind) -> Result<BinnedCounts> {
    parse_deaths(&Table::read(path, &DEATHS_HEADER)?, kind)
}

pub fn parse_deaths_csv(text: &str, kind: DeathsKind) -> Result<BinnedCounts> {
    parse_deaths(
        &Table::parse(Path::new("<text>"), text.as_bytes(), &DEATHS_HEADER)?,
        kind,
    )
}

fn parse_population(table: &Table) -> Result<CensusBins> {
    let mut bins = Vec::new();
    let mut totals = BTreeMap::new();
    for (line, rec) in &table.rows {
        let lo = table.float(*line, rec, 0, "age_lo")?;
        let hi = table.float(*line, rec, 1, "age_hi")?;
        let p = table.count(*line, rec, 2, "population")?;
        bins.push((lo, hi, *line));
        totals.insert(lo.to_bits(), p);
    }
    let edges = contiguous_edges(table, "population", bins)?;
    let totals = edges[..edges.len() - 1]
        .iter()
        .map(|e| totals[&e.to_bits()])
        .collect();
    CensusBins::new(edges, totals)
}

/// Census head counts, `age_lo,age_hi,population`.
pub fn load_population_csv(path: &Path) -> Result<CensusBins> {
    parse_population(&Table::read(path, &POPULATION_HEADER)?)
}

pub fn parse_population_csv(text: &str) -> Result<CensusBins> {
    parse_population(&Table::parse(
        Path::new("<text>"),
        text.as_bytes(),
        &POPULATION_HEADER,
    )?)
}

fn parse_births(table: &Table) -> Result<AnnualSeries> {
    let mut rows = Vec::new();
    for (line, rec) in &table.rows {
        rows.push((
            table.year(*line, rec, 0)?,
            table.count(*line, rec, 1, "births")?,
            *line,
        ));
    }
    rows.sort_by_key(|r| r.0);
    let years: Vec<(i64, usize)> = rows.iter().map(|r| (r.0, r.2)).collect();
    consecutive_years(table, "births", &years)?;
    AnnualSeries::new(rows[0].0, rows.iter().map(|r| r.1).collect())
}

/// Annual births, `year,births`.
pub fn load_births_csv(path: &Path) -> Result<AnnualSeries> {
    parse_births(&Table::read(path, &BIRTHS_HEADER)?)
}

pub fn parse_births_csv(text: &str) -> Result<AnnualSeries> {
    parse_births(&Table::parse(
        Path::new("<text>"),
        text.as_bytes(),
        &BIRTHS_HEADER,
    )?)
}

fn parse_immigration(table: &Table) -> Result<Vec<ImmigrationYear>> {
    let mut out: Vec<(ImmigrationYear, usize)> = Vec::new();
    for (line, rec) in &table.rows {
        let shape = table.float(*line, rec, 2, "shape")?;
        let scale = table.float(*line, rec, 3, "scale")?;
        if !(shape > 0.0 && scale > 0.0) {
            return Err(table.err(
                *line,
                format!("Weibull shape {shape} and scale {scale} must be positive"),
            ));
        }
        out.push((
            ImmigrationYear {
                year: table.year(*line, rec, 0)?,
                total: table.count(*line, rec, 1, "total")?,
                shape,
                scale,
            },
            *line,
        ));
    }
    out.sort_by_key(|r| r.0.year);
    let years: Vec<(i64, usize)> = out.iter().map(|r| (r.0.year, r.1)).collect();
    consecutive_years(table, "immigration", &years)?;
    Ok(out.into_iter().map(|r| r.0).collect())
}

/// Annual immigration with Weibull age parameters, `year,total,shape,scale`.
pub fn load_immigration_csv(path: &Path) -> Result<Vec<ImmigrationYear>> {
    parse_immigration(&Table::read(path, &IMMIGRATION_HEADER)?)
}

pub fn parse_immigration_csv(text: &str) -> Result<Vec<ImmigrationYear>> {
    parse_immigration(&Table::parse(
        Path::new("<text>"),
        text.as_bytes(),
        &IMMIGRATION_HEADER,
    )?)
}

/// Shortest text that reads back to the same `f64`, in exponent form at
/// extreme magnitudes and without a trailing `.0`.
pub(crate) struct Num(pub f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{:?}", self.0);
        f.write_str(s.strip_suffix(".0").unwrap_or(&s))
    }
}

fn header_line(h: &[&str]) -> String {
    let mut s = h.join(",");
    s.push('\n');
    s
}

pub fn deaths_csv(counts: &BinnedCounts) -> String {
    let s = counts.scheme();
    let mut out = header_line(&DEATHS_HEADER);
    for j in 0..s.n_year_bins() {
        let year = s.year_edges()[j] as i64;
        for k in 0..s.n_age_bins() {
            let _ = writeln!(
                out,
                "{year},{},{},{}",
                Num(s.age_edges()[k]),
                Num(s.age_edges()[k + 1]),
                Num(counts.get(k, j))
            );
        }
    }
    out
}

pub fn population_csv(census: &CensusBins) -> String {
    let mut out = header_line(&POPULATION_HEADER);
    for (k, t) in census.totals().iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{}",
            Num(census.edges()[k]),
            Num(census.edges()[k + 1]),
            Num(*t)
        );
    }
    out
}

pub fn births_csv(births: &AnnualSeries) -> String {
    let mut out = header_line(&BIRTHS_HEADER);
    for (y, b) in births.iter() {
        let _ = writeln!(out, "{y},{}", Num(b));
    }
    out
}

pub fn immigration_csv(records: &[ImmigrationYear]) -> String {
    let mut out = header_line(&IMMIGRATION_HEADER);
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.year,
            Num(r.total),
            Num(r.shape),
            Num(r.scale)
        );
    }
    out
}

/// One row of a yearly series report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub year: i64,
    pub band: Band,
}

/// One row of a surface report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRow {
    pub year: i64,
    pub age_lo: f64,
    pub age_hi: f64,
    pub band: Band,
}

pub fn series_rows(series: &StratumSeries) -> Vec<SeriesRow> {
    series
        .years
        .iter()
        .zip(&series.bands)
        .map(|(&year, &band)| SeriesRow { year, band })
        .collect()
}

pub fn surface_rows(surface: &Surface) -> Vec<SurfaceRow> {
    let s = &surface.scheme;
    let mut rows = Vec::with_capacity(s.n_bins());
    for j in 0..s.n_year_bins() {
        for k in 0..s.n_age_bins() {
            rows.push(SurfaceRow {
                year: s.year_edges()[j].floor() as i64,
                age_lo: s.age_edges()[k],
                age_hi: s.age_edges()[k + 1],
                band: surface.get(k, j),
            });
        }
    }
    rows
}

pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = header_line(&SERIES_HEADER);
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.year,
            Num(r.band.median),
            Num(r.band.lo),
            Num(r.band.hi)
        );
    }
    out
}

pub fn surface_csv(rows: &[SurfaceRow]) -> String {
    let mut out = header_line(&SURFACE_HEADER);
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.year,
            Num(r.age_lo),
            Num(r.age_hi),
            Num(r.band.median),
            Num(r.band.lo),
            Num(r.band.hi)
        );
    }
    out
}

fn band_at(table: &Table, line: usize, rec: &csv::StringRecord, first: usize) -> Result<Band> {
    let b = Band {
        median: table.float(line, rec, first, "median")?,
        lo: table.float(line, rec, first + 1, "lo99")?,
        hi: table.float(line, rec, first + 2, "hi99")?,
    };
    if !(b.lo <= b.median && b.median <= b.hi) {
        return Err(table.err(
            line,
            format!("band {} ≤ {} ≤ {} is out of order", b.lo, b.median, b.hi),
        ));
    }
    Ok(b)
}

fn parse_series(table: &Table) -> Result<Vec<SeriesRow>> {
    let rows = table
        .rows
        .iter()
        .map(|(line, rec)| {
            Ok(SeriesRow {
                year: table.year(*line, rec, 0)?,
                band: band_at(table, *line, rec, 1)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let years: Vec<(i64, usize)> = rows
        .iter()
        .zip(&table.rows)
        .map(|(r, (l, _))| (r.year, *l))
        .collect();
    consecutive_years(table, "series", &years)?;
    Ok(rows)
}

/// A yearly report, `year,median,lo99,hi99`.
pub fn load_series_csv(path: &Path) -> Result<Vec<SeriesRow>> {
    parse_series(&Table::read(path, &SERIES_HEADER)?)
}

pub fn parse_series_csv(text: &str) -> Result<Vec<SeriesRow>> {
    parse_series(&Table::parse(
        Path::new("<text>"),
        text.as_bytes(),
        &SERIES_HEADER,
    )?)
}

fn parse_surface(table: &Table) -> Result<Vec<SurfaceRow>> {
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            let age_lo = table.float(*line, rec, 1, "age_lo")?;
            let age_hi = table.float(*line, rec, 2, "age_hi")?;
            if !(age_hi > age_lo) {
                return Err(table.err(
                    *line,
                    format!("age_hi {age_hi} must exceed age_lo {age_lo}"),
                ));
            }
            Ok(SurfaceRow {
                year: table.year(*line, rec, 0)?,
                age_lo,
                age_hi,
                band: band_at(table, *line, rec, 3)?,
            })
        })
        .collect()
}

/// A surface report, `year,age_lo,age_hi,median,lo99,hi99`.
pub fn load_surface_csv(path: &Path) -> Result<Vec<SurfaceRow>> {
    parse_surface(&Table::read(path, &SURFACE_HEADER)?)
}

pub fn parse_surface_csv(text: &str) -> Result<Vec<SurfaceRow>> {
    parse_surface(&Table::parse(
        Path::new("<text>"),
        text.as_bytes(),
        &SURFACE_HEADER,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LCurveRow {
    pub point: LCurvePoint,
    pub selected: bool,
}

pub fn lcurve_csv(rows: &[LCurveRow]) -> String {
    let mut out = header_line(&LCURVE_HEADER);
    for r in rows {
        let p = &r.point;
        let curvature = p.curvature.map(|c| Num(c).to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{curvature},{}",
            Num(p.beta),
            Num(p.residual_norm),
            Num(p.seminorm),
            r.selected as u8
        );
    }
    out
}

fn parse_lcurve(table: &Table) -> Result<Vec<LCurveRow>> {
    let rows: Vec<LCurveRow> = table
        .rows
        .iter()
        .map(|(line, rec)| {
            let selected = match &rec[4] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(table.err(*line, format!("selected must be 0 or 1, got {other:?}")))
                }
            };
            Ok(LCurveRow {
                point: LCurvePoint {
                    beta: table.float(*line, rec, 0, "beta")?,
                    residual_norm: table.count(*line, rec, 1, "residual_norm")?,
                    seminorm: table.count(*line, rec, 2, "seminorm")?,
                    curvature: table.optional_float(*line, rec, 3, "curvature")?,
                },
                selected,
            })
        })
        .collect::<Result<_>>()?;
    if rows.iter().filter(|r| r.selected).count() != 1 {
        return Err(table.err(1, "exactly one row must be selected"));
    }
    Ok(rows)
}

/// The L-curve sweep, `beta,residual_norm,seminorm,curvature,selected`.
pub fn load_lcurve_csv(path: &Path) -> Result<Vec<LCurveRow>> {
    parse_lcurve(&Table::read(path, &LCURVE_HEADER)?)
}

pub fn parse_lcurve_csv(text: &str) -> Result<Vec<LCurveRow>> {
    parse_lcurve(&Table::parse(
        Path::new("<text>"),
        text.as_bytes(),
        &LCURVE_HEADER,
    )?)
}

/// One member's calibrated hazard for one year and age cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRow {
    pub member: usize,
    pub year: i64,
    pub age_lo: f64,
    pub age_hi: f64,
    pub hazard: f64,
}

pub fn calibration_csv(rows: &[CalibrationRow]) -> String {
    let mut out = header_line(&CALIBRATION_HEADER);
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.member,
            r.year,
            Num(r.age_lo),
            Num(r.age_hi),
            Num(r.hazard)
        );
    }
    out
}

/// Posterior hazards per member, `member,year,age_lo,age_hi,hazard`.
pub fn load_calibration_csv(path: &Path) -> Result<Vec<CalibrationRow>> {
    let table = Table::read(path, &CALIBRATION_HEADER)?;
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            Ok(CalibrationRow {
                member: rec[0].parse().map_err(|_| {
                    table.err(*line, format!("member {:?} is not an index", &rec[0]))
                })?,
                year: table.year(*line, rec, 1)?,
                age_lo: table.float(*line, rec, 2, "age_lo")?,
                age_hi: table.float(*line, rec, 3, "age_hi")?,
                hazard: table.count(*line, rec, 4, "hazard")?,
            })
        })
        .collect()
}
