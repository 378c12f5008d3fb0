//! Error statistics: single-pass 1-sigma outlier filter, mean / RMSE / STD
//! summary and empirical CDF.
//!
//! Standard deviations are population (divide by n) throughout, so that
//! `rmse^2 == mean^2 + std^2` for any sample set.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no samples to summarize")]
    EmptyInput,
    #[error("probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("error sample {0} is negative or not finite")]
    InvalidSample(f64),
}

fn check_samples(samples: &[f64]) -> Result<(), StatsError> {
    match samples.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        Some(&bad) => Err(StatsError::InvalidSample(bad)),
        None => Ok(()),
    }
}

fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

fn population_std(samples: &[f64], mean: f64) -> f64 {
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples.len() as f64;
    var.sqrt()
}

/// Samples split by the 1-sigma rule, each side in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<f64>,
    pub removed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Keeps the samples within one standard deviation of the mean. One pass;
/// the threshold is not recomputed after removal.
pub fn one_sigma_filter(samples: &[f64]) -> Result<FilterOutcome, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let m = mean(samples);
    let s = population_std(samples, m);
    // absorbs rounding in m and s so equal samples always survive
    let limit = s * (1.0 + 1e-12) + 4.0 * f64::EPSILON * m.abs();
    let (kept, removed) = samples.iter().partition(|&&x| (x - m).abs() <= limit);
    Ok(FilterOutcome {
        kept,
        removed,
        mean: m,
        std: s,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    pub rmse: f64,
    pub std: f64,
    pub count: usize,
    /// Sorted `(error, P(E <= error))` points, one per sample.
    pub cdf: Vec<(f64, f64)>,
}

pub fn summarize(samples: &[f64]) -> Result<ErrorStats, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    check_samples(samples)?;
    let n = samples.len();
    let m = mean(samples);
    let rmse = (samples.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let std = population_std(samples, m);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cdf = sorted
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n as f64))
        .collect();
    Ok(ErrorStats {
        mean: m,
        rmse,
        std,
        count: n,
        cdf,
    })
}

/// Smallest error whose empirical CDF reaches `probability`.
pub fn cdf_quantile(stats: &ErrorStats, probability: f64) -> Result<f64, StatsError> {
    if !(probability > 0.0 && probability <= 1.0) {
        return Err(StatsError::InvalidProbability(probability));
    }
    let n = stats.cdf.len();
    if n == 0 {
        return Err(StatsError::EmptyInput);
    }
    // compare counts rather than ratios so p*n landing on an integer is exact
    let needed = probability * n as f64;
    let idx = stats
        .cdf
        .iter()
        .position(|&(_, p)| p * n as f64 >= needed - 1e-9)
        .unwrap_or(n - 1);
    Ok(stats.cdf[idx].0)
}
