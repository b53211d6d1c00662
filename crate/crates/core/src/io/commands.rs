//! The work behind each command-line verb.
//!
//! Commands that write a directory build it under a hidden sibling and
//! rename it into place only when everything succeeded.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{AgeTimeGrid, CellField};
use crate::pipeline::{
    backcalculate, calibrate, generate_synthetic_scenario, sample_ensemble_inputs, select_beta,
    BackcalcOutput, Calibration, PipelineInputs, PipelineSettings,
};

use super::config::RunConfig;
use super::manifest::{sha256_hex, Manifest, MANIFEST_NAME};
use super::svg;
use super::tables::{
    births_csv, calibration_csv, deaths_csv, immigration_csv, lcurve_csv, load_births_csv,
    load_calibration_csv, load_deaths_csv, load_immigration_csv, load_lcurve_csv,
    load_population_csv, load_series_csv, load_surface_csv, population_csv, series_csv,
    series_rows, surface_csv, surface_rows, CalibrationRow, DeathsKind, LCurveRow, Num, SeriesRow,
    SurfaceRow,
};

pub const INCIDENCE_BY_YEAR: &str = "incidence_by_year.csv";
pub const INCIDENCE_UNDER70: &str = "incidence_under70.csv";
pub const INCIDENCE_70TO85: &str = "incidence_70to85.csv";
pub const INCIDENCE_85PLUS: &str = "incidence_85plus.csv";
pub const HAZARD_SURFACE: &str = "hazard_surface.csv";
pub const INCIDENCE_SURFACE: &str = "incidence_surface.csv";
pub const LCURVE_CSV: &str = "lcurve.csv";
pub const LCURVE_SVG: &str = "lcurve.svg";
pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const TRUTH_INCIDENCE: &str = "truth_incidence.csv";
pub const TRUTH_HAZARD: &str = "truth_hazard.csv";

/// A directory being assembled next to its final location.
struct Staging {
    tmp: PathBuf,
    dest: PathBuf,
    files: Vec<(String, Vec<u8>)>,
    done: bool,
}

impl Staging {
    fn new(dest: &Path) -> Result<Self> {
        if dest.exists() && !dest.join(MANIFEST_NAME).exists() {
            let empty = std::fs::read_dir(dest)
                .map_err(|e| Error::io(dest, e))?
                .next()
                .is_none();
            if !empty {
                return Err(Error::Config(format!(
                    "output directory {} exists and does not hold a previous run",
                    dest.display()
                )));
            }
        }
        let parent = dest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("out");
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
            files: Vec::new(),
            done: false,
        })
    }

    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) -> Result<()> {
        let bytes = bytes.into();
        let path = self.tmp.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    /// Writes the manifest with hashes of every staged file and moves the
    /// directory into place.
    fn commit(mut self, mut manifest: Manifest) -> Result<PathBuf> {
        for (name, bytes) in &self.files {
            manifest.outputs.insert(name.clone(), sha256_hex(bytes));
        }
        let json = manifest.to_json();
        self.add(MANIFEST_NAME, json)?;
        if self.dest.exists() {
            std::fs::remove_dir_all(&self.dest).map_err(|e| Error::io(&self.dest, e))?;
        }
        std::fs::rename(&self.tmp, &self.dest).map_err(|e| Error::io(&self.dest, e))?;
        self.done = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = std::fs::remove_dir_all(&self.tmp);
        }
    }
}

/// Reads every input named in the config.
pub fn load_inputs(cfg: &RunConfig) -> Result<PipelineInputs> {
    Ok(PipelineInputs {
        grid: cfg.grid.build()?,
        census: load_population_csv(&cfg.inputs.population)?,
        births: load_births_csv(&cfg.inputs.births)?,
        immigration: load_immigration_csv(&cfg.inputs.immigration)?,
        all_cause: load_deaths_csv(&cfg.inputs.all_cause_deaths, DeathsKind::AllCause)?,
        disease_deaths: load_deaths_csv(&cfg.inputs.disease_deaths, DeathsKind::Disease)?,
    })
}

/// Writes `files` next to each other, replacing nothing until all are on
/// disk.
fn write_all_or_nothing(files: &[(PathBuf, String)]) -> Result<()> {
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        for (path, text) in files {
            if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut tmp = path.clone().into_os_string();
            tmp.push(format!(".partial-{}", std::process::id()));
            let tmp = PathBuf::from(tmp);
            std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
            written.push(tmp);
        }
        for ((path, _), tmp) in files.iter().zip(&written) {
            std::fs::rename(tmp, path).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    })();
    if result.is_err() {
        for tmp in &written {
            let _ = std::fs::remove_file(tmp);
        }
    }
    result
}

/// Generates a synthetic data set at the configured input paths, with the
/// true rates beside the disease deaths file.
pub fn synth(cfg: &RunConfig) -> Result<String> {
    let grid = cfg.grid.build()?;
    let sc = generate_synthetic_scenario(&grid, &cfg.synth, cfg.seed)?;
    let truth_dir = cfg
        .inputs
        .disease_deaths
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut truth = String::from("year,age_lo,age_hi,rate\n");
    let cols = &sc.col_scheme;
    for s in 0..cols.n_year_bins() {
        for r in 0..cols.n_age_bins() {
            let _ = writeln!(
                truth,
                "{},{},{},{}",
                cols.year_edges()[s] as i64,
                Num(cols.age_edges()[r]),
                Num(cols.age_edges()[r + 1]),
                Num(sc.lambda[s * cols.n_age_bins() + r])
            );
        }
    }
    let files = vec![
        (cfg.inputs.population.clone(), population_csv(&sc.census)),
        (cfg.inputs.births.clone(), births_csv(&sc.births)),
        (
            cfg.inputs.immigration.clone(),
            immigration_csv(&sc.immigration),
        ),
        (
            cfg.inputs.all_cause_deaths.clone(),
            deaths_csv(&sc.all_cause),
        ),
        (
            cfg.inputs.disease_deaths.clone(),
            deaths_csv(&sc.disease_deaths),
        ),
        (truth_dir.join(TRUTH_INCIDENCE), truth),
        (
            truth_dir.join(TRUTH_HAZARD),
            hazard_rows_csv(&grid, &sc.hazard)?,
        ),
    ];
    write_all_or_nothing(&files)?;
    Ok(format!(
        "wrote synthetic inputs ({} all-cause deaths, {} disease deaths)",
        sc.all_cause.total(),
        sc.disease_deaths.total()
    ))
}

fn year_cells(grid: &AgeTimeGrid) -> Result<(i64, usize, usize)> {
    let per_year = grid.steps_per_year().ok_or_else(|| {
        Error::Config("calibrated hazards need a whole number of steps per year".into())
    })?;
    if grid.t_min().fract() != 0.0 {
        return Err(Error::Config(
            "calibrated hazards need a grid starting on a whole year".into(),
        ));
    }
    Ok((
        grid.t_min() as i64,
        grid.n_time_cells() / per_year,
        per_year,
    ))
}

fn hazard_rows(
    grid: &AgeTimeGrid,
    member: usize,
    hazard: &CellField,
) -> Result<Vec<CalibrationRow>> {
    let (first, n_years, per_year) = year_cells(grid)?;
    let mut rows = Vec::with_capacity(n_years * grid.n_age_cells());
    for y in 0..n_years {
        let col = hazard.at_time(y * per_year);
        for (i, &h) in col.iter().enumerate() {
            rows.push(CalibrationRow {
                member,
                year: first + y as i64,
                age_lo: grid.age(i),
                age_hi: grid.age(i + 1),
                hazard: h,
            });
        }
    }
    Ok(rows)
}

fn hazard_rows_csv(grid: &AgeTimeGrid, hazard: &CellField) -> Result<String> {
    let mut out = String::from("year,age_lo,age_hi,hazard\n");
    for r in hazard_rows(grid, 0, hazard)? {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.year,
            Num(r.age_lo),
            Num(r.age_hi),
            Num(r.hazard)
        );
    }
    Ok(out)
}

/// Rebuilds per-member yearly hazards from calibration rows.
pub fn hazards_from_rows(
    grid: &AgeTimeGrid,
    rows: &[CalibrationRow],
    n_members: usize,
) -> Result<Vec<CellField>> {
    let (first, n_years, per_year) = year_cells(grid)?;
    let n_a = grid.n_age_cells();
    if rows.len() != n_members * n_years * n_a {
        return Err(Error::Dimension {
            what: "calibration rows".into(),
            expected: n_members * n_years * n_a,
            actual: rows.len(),
        });
    }
    let mut out = Vec::with_capacity(n_members);
    for m in 0..n_members {
        let mut f = CellField::zeros(*grid);
        for y in 0..n_years {
            for i in 0..n_a {
                let r = &rows[(m * n_years + y) * n_a + i];
                if r.member != m
                    || r.year != first + y as i64
                    || r.age_lo != grid.age(i)
                    || r.age_hi != grid.age(i + 1)
                {
                    return Err(Error::invalid(format!(
                        "calibration row for member {m}, year {}, age {} is missing or out of order",
                        first + y as i64,
                        grid.age(i)
                    )));
                }
                for j in y * per_year..(y + 1) * per_year {
                    f.set(i, j, r.hazard);
                }
            }
        }
        out.push(f);
    }
    Ok(out)
}

/// Runs the ensemble Kalman inversion and stores every member's hazard.
pub fn calibrate_cmd(cfg: &RunConfig) -> Result<String> {
    let manifest = Manifest::new("calibrate", cfg)?;
    let inputs = load_inputs(cfg)?;
    let settings = cfg.settings()?;
    let mut stage = Staging::new(&cfg.output.dir)?;
    let cal = calibrate(&inputs, &settings)?;
    let mut rows = Vec::new();
    for (m, h) in cal.hazards.iter().enumerate() {
        rows.extend(hazard_rows(&inputs.grid, m, h)?);
    }
    stage.add(CALIBRATION_CSV, calibration_csv(&rows))?;
    let mut manifest = manifest;
    manifest.innovations = cal.innovations.clone();
    let dest = stage.commit(manifest)?;
    Ok(format!(
        "calibrated {} members over {} years into {}",
        cal.ensemble_size(),
        cal.innovations.len(),
        dest.display()
    ))
}

fn load_calibration(
    cfg: &RunConfig,
    inputs: &PipelineInputs,
    settings: &PipelineSettings,
    dir: &Path,
) -> Result<Calibration> {
    let m = Manifest::load(dir)?;
    if m.command != "calibrate" {
        return Err(Error::Config(format!(
            "{} does not hold a calibration",
            dir.display()
        )));
    }
    if m.seed != cfg.seed || m.ensemble_size != cfg.ensemble.size {
        return Err(Error::Config(format!(
            "calibration was made with seed {} and {} members, config asks for seed {} and {}",
            m.seed, m.ensemble_size, cfg.seed, cfg.ensemble.size
        )));
    }
    let rows = load_calibration_csv(&dir.join(CALIBRATION_CSV))?;
    let hazards = hazards_from_rows(&inputs.grid, &rows, cfg.ensemble.size)?;
    let drivers = sample_ensemble_inputs(inputs, settings)?;
    Ok(Calibration {
        drivers,
        hazards,
        innovations: m.innovations,
    })
}

fn lcurve_rows(out: &BackcalcOutput) -> Option<Vec<LCurveRow>> {
    out.lcurve.as_ref().map(|sel| {
        sel.points
            .iter()
            .enumerate()
            .map(|(i, p)| LCurveRow {
                point: *p,
                selected: i == sel.index,
            })
            .collect()
    })
}

/// Renders every figure of a report from its tables.
fn figures(
    by_year: &[SeriesRow],
    hazard: &[SurfaceRow],
    incidence: &[SurfaceRow],
    lcurve: Option<&[LCurveRow]>,
) -> Vec<(String, String)> {
    let mut out = vec![(
        "figures/incidence_by_year.svg".to_string(),
        svg::band_chart(
            "New cases per year, all onset ages",
            "year",
            "cases",
            &svg::series_points(by_year),
        ),
    )];
    let mut years: Vec<i64> = hazard.iter().map(|r| r.year).collect();
    years.dedup();
    for y in years {
        out.push((
            format!("figures/hazard_{y}.svg"),
            svg::band_chart(
                &format!("Onset rate, {y}"),
                "age",
                "rate per person-year",
                &svg::surface_year(hazard, y),
            ),
        ));
        out.push((
            format!("figures/incidence_{y}.svg"),
            svg::band_chart(
                &format!("New cases by age, {y}"),
                "age",
                "cases",
                &svg::surface_year(incidence, y),
            ),
        ));
    }
    if let Some(rows) = lcurve {
        out.push((LCURVE_SVG.to_string(), svg::lcurve_chart(rows)));
    }
    out
}

fn stage_report(stage: &mut Staging, out: &BackcalcOutput) -> Result<()> {
    let e = &out.estimates;
    let by_year = series_rows(&e.all_ages);
    let hazard = surface_rows(&e.hazard);
    let incidence = surface_rows(&e.incidence);
    stage.add(INCIDENCE_BY_YEAR, series_csv(&by_year))?;
    stage.add(INCIDENCE_UNDER70, series_csv(&series_rows(&e.under70)))?;
    stage.add(INCIDENCE_70TO85, series_csv(&series_rows(&e.from70to85)))?;
    stage.add(INCIDENCE_85PLUS, series_csv(&series_rows(&e.over85)))?;
    stage.add(HAZARD_SURFACE, surface_csv(&hazard))?;
    stage.add(INCIDENCE_SURFACE, surface_csv(&incidence))?;
    let lc = lcurve_rows(out);
    if let Some(rows) = &lc {
        stage.add(LCURVE_CSV, lcurve_csv(rows))?;
    }
    for (name, text) in figures(&by_year, &hazard, &incidence, lc.as_deref()) {
        stage.add(&name, text)?;
    }
    Ok(())
}

fn finish_backcalc(
    cfg: &RunConfig,
    command: &str,
    stage: Staging,
    mut manifest: Manifest,
    cal: &Calibration,
    out: &BackcalcOutput,
) -> Result<String> {
    manifest.beta = Some(out.beta);
    manifest.lcurve_low_confidence = out.lcurve.as_ref().map(|s| s.low_confidence);
    manifest.negative_entries = Some(out.estimates.negative_entries);
    manifest.innovations = cal.innovations.clone();
    let dest = stage.commit(manifest)?;
    Ok(format!(
        "{command}: {} members, β = {:e}, report in {}\n{}",
        cfg.ensemble.size,
        out.beta,
        dest.display(),
        summary_table(&series_rows(&out.estimates.all_ages))
    ))
}

/// Back-calculates from a stored calibration.
pub fn backcalc_cmd(cfg: &RunConfig, calibration_dir: &Path) -> Result<String> {
    let manifest = Manifest::new("backcalc", cfg)?;
    let inputs = load_inputs(cfg)?;
    let settings = cfg.settings()?;
    let cal = load_calibration(cfg, &inputs, &settings, calibration_dir)?;
    let mut stage = Staging::new(&cfg.output.dir)?;
    let out = backcalculate(&inputs, &settings, &cal)?;
    stage_report(&mut stage, &out)?;
    finish_backcalc(cfg, "backcalc", stage, manifest, &cal, &out)
}

/// Calibration, back-calculation and the full report.
pub fn run_cmd(cfg: &RunConfig) -> Result<String> {
    let manifest = Manifest::new("run", cfg)?;
    let inputs = load_inputs(cfg)?;
    let settings = cfg.settings()?;
    let mut stage = Staging::new(&cfg.output.dir)?;
    let cal = calibrate(&inputs, &settings)?;
    let out = backcalculate(&inputs, &settings, &cal)?;
    stage_report(&mut stage, &out)?;
    finish_backcalc(cfg, "run", stage, manifest, &cal, &out)
}

/// The L-curve sweep alone, on member 0 of a fresh calibration.
pub fn lcurve_cmd(cfg: &RunConfig) -> Result<String> {
    let mut manifest = Manifest::new("lcurve", cfg)?;
    let inputs = load_inputs(cfg)?;
    let settings = cfg.settings()?;
    let mut stage = Staging::new(&cfg.output.dir)?;
    let cal = calibrate(&inputs, &settings)?;
    let sel = select_beta(&inputs, &settings, &cal, &cfg.backcalc.lcurve)?;
    let rows: Vec<LCurveRow> = sel
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| LCurveRow {
            point: *p,
            selected: i == sel.index,
        })
        .collect();
    stage.add(LCURVE_CSV, lcurve_csv(&rows))?;
    stage.add(LCURVE_SVG, svg::lcurve_chart(&rows))?;
    manifest.beta = Some(sel.beta);
    manifest.lcurve_low_confidence = Some(sel.low_confidence);
    manifest.innovations = cal.innovations;
    let dest = stage.commit(manifest)?;
    Ok(format!(
        "L-curve corner at β = {:e}{} in {}",
        sel.beta,
        if sel.low_confidence {
            " (low confidence)"
        } else {
            ""
        },
        dest.display()
    ))
}

fn summary_table(rows: &[SeriesRow]) -> String {
    let mut s = format!(
        "{:>6} {:>14} {:>14} {:>14}\n",
        "year", "median", "lo99", "hi99"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6} {:>14.0} {:>14.0} {:>14.0}",
            r.year, r.band.median, r.band.lo, r.band.hi
        );
    }
    s
}

/// Re-reads a finished run, checks its recorded hashes, redraws the
/// figures and returns the yearly table.
pub fn report_cmd(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!(
            "run directory {} does not exist",
            dir.display()
        )));
    }
    let manifest = Manifest::load(dir)?;
    let mut mismatched = Vec::new();
    for (name, hash) in &manifest.outputs {
        if name.ends_with(".csv") {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&bytes) != *hash {
                mismatched.push(name.clone());
            }
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::invalid(format!(
            "{} changed since the run: {}",
            dir.display(),
            mismatched.join(", ")
        )));
    }
    let by_year = load_series_csv(&dir.join(INCIDENCE_BY_YEAR))?;
    let under70 = load_series_csv(&dir.join(INCIDENCE_UNDER70))?;
    let over85 = load_series_csv(&dir.join(INCIDENCE_85PLUS))?;
    let hazard = load_surface_csv(&dir.join(HAZARD_SURFACE))?;
    let incidence = load_surface_csv(&dir.join(INCIDENCE_SURFACE))?;
    let lc_path = dir.join(LCURVE_CSV);
    let lcurve = if lc_path.exists() {
        Some(load_lcurve_csv(&lc_path)?)
    } else {
        None
    };
    for (name, text) in figures(&by_year, &hazard, &incidence, lcurve.as_deref()) {
        let path = dir.join(&name);
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "run {} (seed {}, {} members)",
        manifest.run_hash, manifest.seed, manifest.ensemble_size
    );
    if let Some(b) = manifest.beta {
        let _ = writeln!(s, "β = {b:e}");
    }
    let _ = writeln!(s, "\nNew cases, all onset ages");
    s.push_str(&summary_table(&by_year));
    let _ = writeln!(s, "\nNew cases, onset under 70");
    s.push_str(&summary_table(&under70));
    let _ = writeln!(s, "\nNew cases, onset 85 and over");
    s.push_str(&summary_table(&over85));
    Ok(s)
}

/// Builds a calibration from in-memory hazards; used by tests that skip
/// the inversion.
pub fn calibration_from_hazards(
    inputs: &PipelineInputs,
    settings: &PipelineSettings,
    hazards: Vec<CellField>,
) -> Result<Calibration> {
    let drivers: Vec<Arc<_>> = sample_ensemble_inputs(inputs, settings)?;
    Ok(Calibration {
        drivers,
        hazards,
        innovations: Vec::new(),
    })
}
