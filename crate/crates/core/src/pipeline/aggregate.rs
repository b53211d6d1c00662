use crate::error::{Error, Result};
use crate::grid::BinningScheme;

use super::member::EnsembleRun;

pub const LOWER_P: f64 = 0.005;
pub const UPPER_P: f64 = 0.995;

/// Median with a 99% ensemble interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Nearest-rank quantile: the `⌈pN⌉`-th smallest value.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // the guard keeps p·N that lands on an integer from rounding up
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Middle value, or the mean of the middle pair for even counts.
pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn band(values: &[f64]) -> Band {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Band {
        median: median(&v),
        lo: nearest_rank(&v, LOWER_P),
        hi: nearest_rank(&v, UPPER_P),
    }
}

/// Per-bin bands on the onset basis, year-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub scheme: BinningScheme,
    pub bands: Vec<Band>,
}

impl Surface {
    pub fn get(&self, r: usize, s: usize) -> Band {
        self.bands[s * self.scheme.n_age_bins() + r]
    }
}

/// Yearly totals of incidence over an age range.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumSeries {
    pub age_lo: f64,
    pub age_hi: f64,
    pub years: Vec<i64>,
    pub bands: Vec<Band>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateEstimates {
    pub hazard: Surface,
    pub incidence: Surface,
    pub all_ages: StratumSeries,
    pub under70: StratumSeries,
    pub from70to85: StratumSeries,
    pub over85: StratumSeries,
    /// Unclamped rates, one vector per member.
    pub raw_lambda: Vec<Vec<f64>>,
    /// Member-bin entries that were negative before clamping.
    pub negative_entries: usize,
}

/// Replaces the median and stretches the interval to contain it. A sum of
/// per-bin medians need not lie between quantiles of the member totals.
fn enclosing(b: Band, median: f64) -> Band {
    Band {
        median,
        lo: b.lo.min(median),
        hi: b.hi.max(median),
    }
}

const CUT_70: f64 = 70.0;
const CUT_85: f64 = 85.0;

fn stratum_of(scheme: &BinningScheme, r: usize) -> Result<usize> {
    let (lo, hi) = (scheme.age_edges()[r], scheme.age_edges()[r + 1]);
    let straddles = |c: f64| lo < c && c < hi;
    if straddles(CUT_70) || straddles(CUT_85) {
        return Err(Error::invalid(format!(
            "onset age bin [{lo}, {hi}) straddles a reporting stratum boundary"
        )));
    }
    Ok(if hi <= CUT_70 {
        0
    } else if hi <= CUT_85 {
        1
    } else {
        2
    })
}

/// Ensemble bands of rates, per-member incidence `λ·U` and strata totals.
///
/// Tails are nearest-rank quantiles; the median is the conventional one.
/// Stratum medians are sums of per-bin incidence medians, so the strata add
/// up to the all-ages figure; their intervals are quantiles of per-member
/// stratum totals, widened when needed to contain that median.
pub fn aggregate(runs: &[EnsembleRun], clamp_negative: bool) -> Result<AggregateEstimates> {
    if runs.len() < 2 {
        return Err(Error::invalid(format!(
            "aggregation needs at least 2 members, got {}",
            runs.len()
        )));
    }
    let scheme = runs[0].basis.clone();
    for r in runs {
        if r.basis != scheme {
            return Err(Error::invalid(format!(
                "member {} uses a different onset basis",
                r.member_id
            )));
        }
        if r.solution.lambda.len() != scheme.n_bins() || r.person_years.len() != scheme.n_bins() {
            return Err(Error::Dimension {
                what: format!("member {} solution", r.member_id),
                expected: scheme.n_bins(),
                actual: r.solution.lambda.len(),
            });
        }
    }
    let (k, j) = (scheme.n_age_bins(), scheme.n_year_bins());
    let n_bins = k * j;
    let mut negative_entries = 0;
    let rates: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            r.solution
                .lambda
                .iter()
                .map(|&v| {
                    if v < 0.0 {
                        negative_entries += 1;
                    }
                    if clamp_negative {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let cases: Vec<Vec<f64>> = runs
        .iter()
        .zip(&rates)
        .map(|(r, l)| l.iter().zip(&r.person_years).map(|(a, b)| a * b).collect())
        .collect();

    let column = |m: &[Vec<f64>], idx: usize| -> Vec<f64> { m.iter().map(|v| v[idx]).collect() };
    let hazard = Surface {
        scheme: scheme.clone(),
        bands: (0..n_bins).map(|i| band(&column(&rates, i))).collect(),
    };
    let incidence = Surface {
        scheme: scheme.clone(),
        bands: (0..n_bins).map(|i| band(&column(&cases, i))).collect(),
    };

    let strata: Vec<usize> = (0..k)
        .map(|r| stratum_of(&scheme, r))
        .collect::<Result<_>>()?;
    let years: Vec<i64> = scheme.year_edges()[..j]
        .iter()
        .map(|y| y.floor() as i64)
        .collect();
    let edges = scheme.age_edges();
    let bounds = [
        (edges[0], CUT_70.min(edges[k])),
        (CUT_70.max(edges[0]), CUT_85.min(edges[k])),
        (CUT_85.max(edges[0]), edges[k]),
    ];
    let mut series: Vec<StratumSeries> = bounds
        .iter()
        .map(|&(age_lo, age_hi)| StratumSeries {
            age_lo,
            age_hi,
            years: years.clone(),
            bands: Vec::with_capacity(j),
        })
        .collect();
    let mut all_ages = StratumSeries {
        age_lo: edges[0],
        age_hi: edges[k],
        years: years.clone(),
        bands: Vec::with_capacity(j),
    };
    for s in 0..j {
        let mut medians = [0.0; 3];
        let mut totals = vec![[0.0; 3]; runs.len()];
        for r in 0..k {
            let idx = s * k + r;
            let st = strata[r];
            medians[st] += incidence.bands[idx].median;
            for (m, c) in cases.iter().enumerate() {
                totals[m][st] += c[idx];
            }
        }
        for (st, out) in series.iter_mut().enumerate() {
            let b = band(&totals.iter().map(|t| t[st]).collect::<Vec<_>>());
            out.bands.push(enclosing(b, medians[st]));
        }
        let b = band(
            &totals
                .iter()
                .map(|t| t[0] + t[1] + t[2])
                .collect::<Vec<_>>(),
        );
        all_ages
            .bands
            .push(enclosing(b, medians[0] + medians[1] + medians[2]));
    }
    let over85 = series.pop().unwrap();
    let from70to85 = series.pop().unwrap();
    let under70 = series.pop().unwrap();
    Ok(AggregateEstimates {
        hazard,
        incidence,
        all_ages,
        under70,
        from70to85,
        over85,
        raw_lambda: runs.iter().map(|r| r.solution.lambda.clone()).collect(),
        negative_entries,
    })
}
