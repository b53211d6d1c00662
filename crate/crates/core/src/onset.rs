//! Weibull onset-to-death delay.
//!
//! ```text
//! γ(τ) = (k/ϑ)(τ/ϑ)^{k−1} exp(−(τ/ϑ)^k),   F(τ) = 1 − exp(−(τ/ϑ)^k)
//! ```
//!
//! The operator assembly only needs the year-integrated weights
//! `Γ_i = F(i) − F(i−1)`, taken from exact CDF differences. They are not
//! renormalized over the horizon: mass beyond it is censored.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullKernel {
    shape: f64,
    scale: f64,
}

impl WeibullKernel {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0) {
            return Err(Error::invalid(format!(
                "Weibull shape must be positive, got {shape}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!(
                "Weibull scale must be positive, got {scale}"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn pdf(&self, tau: f64) -> Result<f64> {
        if tau < 0.0 || tau.is_nan() {
            return Err(Error::invalid(format!(
                "delay must be nonnegative, got {tau}"
            )));
        }
        let (k, s) = (self.shape, self.scale);
        if tau == 0.0 {
            return Ok(match k.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Greater) => 0.0,
                Some(std::cmp::Ordering::Equal) => 1.0 / s,
                _ => f64::INFINITY,
            });
        }
        let x = tau / s;
        Ok(k / s * x.powf(k - 1.0) * (-x.powf(k)).exp())
    }

    pub fn cdf(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        -(-(tau / self.scale).powf(self.shape)).exp_m1()
    }

    /// Survival `1 − F(τ)`.
    pub fn sf(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 1.0;
        }
        (-(tau / self.scale).powf(self.shape)).exp()
    }

    /// `ϑ·Γ(1 + 1/k)`.
    pub fn mean(&self) -> f64 {
        self.scale * gamma(1.0 + 1.0 / self.shape)
    }

    /// `Γ_1 … Γ_n`: probability of death in year `i` after onset.
    pub fn year_weights(&self, n_years: usize) -> Vec<f64> {
        (1..=n_years)
            .map(|i| {
                // F(i) − F(i−1) = S(i−1) − S(i); the survival form keeps
                // precision in the tail
                self.sf(i as f64 - 1.0) - self.sf(i as f64)
            })
            .collect()
    }
}

/// How the second parameter of N(·, ·) in the sampler config is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Spread {
    #[default]
    Std,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSamplerConfig {
    pub scale_mean: f64,
    pub scale_std: f64,
    pub shape_mean: f64,
    pub shape_std: f64,
    pub horizon_years: usize,
    #[serde(default)]
    pub spread: Spread,
}

impl Default for KernelSamplerConfig {
    fn default() -> Self {
        Self {
            scale_mean: 6.3841,
            scale_std: 0.411,
            shape_mean: 1.4769,
            shape_std: 0.0068,
            horizon_years: 40,
            spread: Spread::Std,
        }
    }
}

pub const MAX_RESAMPLES: usize = 1000;

impl KernelSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.scale_std) && ok(self.shape_std)) {
            return Err(Error::Config(format!(
                "onset spreads must be finite and nonnegative (scale {}, shape {})",
                self.scale_std, self.shape_std
            )));
        }
        if !(self.scale_mean.is_finite() && self.shape_mean.is_finite()) {
            return Err(Error::Config("onset means must be finite".into()));
        }
        if self.horizon_years == 0 {
            return Err(Error::Config(
                "onset.horizon_years must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn std_devs(&self) -> (f64, f64) {
        match self.spread {
            Spread::Std => (self.scale_std, self.shape_std),
            Spread::Variance => (self.scale_std.sqrt(), self.shape_std.sqrt()),
        }
    }

    /// The kernel at the configured means.
    pub fn mean_kernel(&self) -> Result<WeibullKernel> {
        WeibullKernel::new(self.shape_mean, self.scale_mean)
    }
}

/// Independent normal draws of scale and shape, redrawn until `k > 1` and
/// `ϑ > 0`.
pub fn sample_kernel<R: Rng + ?Sized>(
    config: &KernelSamplerConfig,
    rng: &mut R,
) -> Result<WeibullKernel> {
    config.validate()?;
    let (s_sd, k_sd) = config.std_devs();
    let scale = Normal::new(config.scale_mean, s_sd).map_err(|e| Error::Config(e.to_string()))?;
    let shape = Normal::new(config.shape_mean, k_sd).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..MAX_RESAMPLES {
        let s = scale.sample(rng);
        let k = shape.sample(rng);
        if s > 0.0 && k > 1.0 {
            return WeibullKernel::new(k, s);
        }
    }
    Err(Error::Config(format!(
        "onset kernel sampler rejected {MAX_RESAMPLES} draws in a row; check means and spreads"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::{member_rng, Purpose};

    fn paper_kernel() -> WeibullKernel {
        WeibullKernel::new(1.4769, 6.3841).unwrap()
    }

    #[test]
    fn pdf_values() {
        let k = paper_kernel();
        assert_eq!(k.pdf(0.0).unwrap(), 0.0);
        // (k/ϑ)·e^{−1}, evaluated with mpmath
        assert!((k.pdf(6.3841).unwrap() - 0.08510536280229056).abs() < 1e-14);
        assert!(k.pdf(-1.0).is_err());
    }

    #[test]
    fn first_year_weight_closed_form() {
        let w = paper_kernel().year_weights(3);
        assert!((w[0] - 0.0626575188560734).abs() < 1e-14);
        assert!((w[1] - 0.10216471773448914).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_cdf_and_grow_with_horizon() {
        let k = paper_kernel();
        let mut prev = 0.0;
        for n in 1..30 {
            let s: f64 = k.year_weights(n).iter().sum();
            assert!((s - k.cdf(n as f64)).abs() < 1e-13);
            assert!(s > prev && s < 1.0);
            prev = s;
        }
    }

    #[test]
    fn tiny_scale_puts_mass_in_first_year() {
        let k = WeibullKernel::new(1.5, 1e-6).unwrap();
        assert!((k.year_weights(2)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_matches_closed_form() {
        assert!((paper_kernel().mean() - 5.774404484658613).abs() < 1e-9);
    }

    #[test]
    fn degenerate_sampler_returns_means() {
        let cfg = KernelSamplerConfig {
            scale_std: 0.0,
            shape_std: 0.0,
            ..Default::default()
        };
        let mut rng = member_rng(1, Purpose::Kernel, 0);
        for _ in 0..5 {
            let k = sample_kernel(&cfg, &mut rng).unwrap();
            assert_eq!((k.scale(), k.shape()), (6.3841, 1.4769));
        }
    }

    #[test]
    fn sampler_is_reproducible() {
        let cfg = KernelSamplerConfig::default();
        let a: Vec<_> = {
            let mut r = member_rng(9, Purpose::Kernel, 2);
            (0..10)
                .map(|_| sample_kernel(&cfg, &mut r).unwrap())
                .collect()
        };
        let b: Vec<_> = {
            let mut r = member_rng(9, Purpose::Kernel, 2);
            (0..10)
                .map(|_| sample_kernel(&cfg, &mut r).unwrap())
                .collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_gives_up_on_impossible_config() {
        let cfg = KernelSamplerConfig {
            shape_mean: 0.5,
            shape_std: 0.0,
            ..Default::default()
        };
        let mut rng = member_rng(1, Purpose::Kernel, 0);
        assert!(sample_kernel(&cfg, &mut rng).is_err());
    }

    #[test]
    fn variance_reading_takes_square_root() {
        let cfg = KernelSamplerConfig {
            scale_std: 0.04,
            spread: Spread::Variance,
            ..Default::default()
        };
        assert!((cfg.std_devs().0 - 0.2).abs() < 1e-15);
    }
}
