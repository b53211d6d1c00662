use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eki::{HazardPrior, DEFAULT_NOISE_FLOOR};
use crate::error::{Error, Result};
use crate::grid::AgeTimeGrid;
use crate::onset::{KernelSamplerConfig, Spread};
use crate::pipeline::{BetaChoice, InputSampling, LCurveGrid, PipelineSettings, SyntheticTruth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub age_min: f64,
    pub age_max: f64,
    pub year_start: f64,
    pub year_end: f64,
    pub step: f64,
}

impl GridConfig {
    pub fn build(&self) -> Result<AgeTimeGrid> {
        AgeTimeGrid::new(
            self.age_min,
            self.age_max,
            self.year_start,
            self.year_end,
            self.step,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub size: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { size: 100 }
    }
}

/// Onset-to-death sampler and the youngest onset age of the basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnsetConfig {
    pub scale_mean: f64,
    pub scale_std: f64,
    pub shape_mean: f64,
    pub shape_std: f64,
    pub horizon_years: usize,
    pub spread: Spread,
    pub floor: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        let k = KernelSamplerConfig::default();
        Self {
            scale_mean: k.scale_mean,
            scale_std: k.scale_std,
            shape_mean: k.shape_mean,
            shape_std: k.shape_std,
            horizon_years: k.horizon_years,
            spread: k.spread,
            floor: 40.0,
        }
    }
}

impl OnsetConfig {
    pub fn kernel(&self) -> KernelSamplerConfig {
        KernelSamplerConfig {
            scale_mean: self.scale_mean,
            scale_std: self.scale_std,
            shape_mean: self.shape_mean,
            shape_std: self.shape_std,
            horizon_years: self.horizon_years,
            spread: self.spread,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkiConfig {
    /// Observation variance is `max(y, noise_floor)`.
    pub noise_floor: f64,
    pub prior: HazardPrior,
}

impl Default for EkiConfig {
    fn default() -> Self {
        Self {
            noise_floor: DEFAULT_NOISE_FLOOR,
            prior: HazardPrior::default(),
        }
    }
}

/// Either a fixed `β` or the word `"lcurve"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSetting {
    Value(f64),
    Mode(String),
}

impl fmt::Display for BetaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaSetting::Value(v) => write!(f, "{v}"),
            BetaSetting::Mode(m) => f.write_str(m),
        }
    }
}

impl BetaSetting {
    /// Parses a command-line value: a number or `lcurve`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "lcurve" {
            return Ok(BetaSetting::Mode(s.into()));
        }
        s.parse::<f64>().map(BetaSetting::Value).map_err(|_| {
            Error::Config(format!(
                "beta must be a positive number or \"lcurve\", got {s:?}"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackcalcConfig {
    pub beta: BetaSetting,
    #[serde(default)]
    pub lcurve: LCurveGrid,
    #[serde(default = "yes")]
    pub clamp_negative: bool,
}

fn yes() -> bool {
    true
}

impl Default for BackcalcConfig {
    fn default() -> Self {
        Self {
            beta: BetaSetting::Value(1e6),
            lcurve: LCurveGrid::default(),
            clamp_negative: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub population: PathBuf,
    pub births: PathBuf,
    pub immigration: PathBuf,
    pub all_cause_deaths: PathBuf,
    pub disease_deaths: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Everything a run needs, read from one TOML file.
///
/// Relative paths are taken from the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub onset: OnsetConfig,
    #[serde(default)]
    pub eki: EkiConfig,
    #[serde(default)]
    pub backcalc: BackcalcConfig,
    /// Reporting correction factor per calendar year, keyed by the year.
    #[serde(default)]
    pub corrections: BTreeMap<String, f64>,
    #[serde(default)]
    pub sampling: InputSampling,
    pub inputs: InputPaths,
    pub output: OutputConfig,
    #[serde(default)]
    pub synth: SyntheticTruth,
}

/// Command-line replacements for config values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beta: Option<BetaSetting>,
    pub ensemble_size: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.inputs.population);
        fix(&mut self.inputs.births);
        fix(&mut self.inputs.immigration);
        fix(&mut self.inputs.all_cause_deaths);
        fix(&mut self.inputs.disease_deaths);
        fix(&mut self.output.dir);
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(b) = &o.beta {
            self.backcalc.beta = b.clone();
        }
        if let Some(n) = o.ensemble_size {
            self.ensemble.size = n;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid
            .build()
            .map_err(|e| Error::Config(format!("grid: {e}")))?;
        if self.ensemble.size < 2 {
            return Err(Error::Config(format!(
                "ensemble.size must be at least 2, got {}",
                self.ensemble.size
            )));
        }
        self.onset.kernel().validate()?;
        self.eki.prior.validate()?;
        if !(self.eki.noise_floor.is_finite() && self.eki.noise_floor > 0.0) {
            return Err(Error::Config(format!(
                "eki.noise_floor must be positive, got {}",
                self.eki.noise_floor
            )));
        }
        self.beta_choice()?;
        self.correction_factors()?;
        if !(self.sampling.immigration_rel_std.is_finite()
            && self.sampling.immigration_rel_std >= 0.0)
        {
            return Err(Error::Config(format!(
                "sampling.immigration_rel_std must be ≥ 0, got {}",
                self.sampling.immigration_rel_std
            )));
        }
        Ok(())
    }

    pub fn beta_choice(&self) -> Result<BetaChoice> {
        match &self.backcalc.beta {
            BetaSetting::Value(b) if b.is_finite() && *b > 0.0 => Ok(BetaChoice::Fixed(*b)),
            BetaSetting::Mode(m) if m == "lcurve" => {
                self.backcalc.lcurve.betas()?;
                Ok(BetaChoice::LCurve(self.backcalc.lcurve))
            }
            other => Err(Error::Config(format!(
                "backcalc.beta must be a positive number or \"lcurve\", got {other}"
            ))),
        }
    }

    pub fn correction_factors(&self) -> Result<BTreeMap<i64, f64>> {
        self.corrections
            .iter()
            .map(|(k, &v)| {
                let year = k
                    .parse::<i64>()
                    .map_err(|_| Error::Config(format!("corrections key {k:?} is not a year")))?;
                if !(v > 0.0 && v <= 2.0) {
                    return Err(Error::Config(format!(
                        "correction factor {v} for {year} lies outside (0, 2]"
                    )));
                }
                Ok((year, v))
            })
            .collect()
    }

    pub fn settings(&self) -> Result<PipelineSettings> {
        Ok(PipelineSettings {
            ensemble_size: self.ensemble.size,
            seed: self.seed,
            kernel: self.onset.kernel(),
            prior: self.eki.prior,
            noise_floor: self.eki.noise_floor,
            beta: self.beta_choice()?,
            onset_floor: self.onset.floor,
            corrections: self.correction_factors()?,
            sampling: self.sampling,
            clamp_negative: self.backcalc.clamp_negative,
        })
    }

    /// Canonical text of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
