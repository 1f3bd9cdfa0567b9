//! Regression metrics and Gaussian kernel density estimates.

use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("truth and prediction lengths differ")]
    LengthMismatch,
    #[error("not enough values")]
    TooFew,
    #[error("truth is constant")]
    ConstantTruth,
    #[error("truth has zero range")]
    ZeroRange,
    #[error("every entry was excluded")]
    AllExcluded,
    #[error("empty input")]
    EmptyInput,
    #[error("bandwidth must be positive")]
    BadBandwidth,
}

fn check(y: &[f64], p: &[f64]) -> Result<(), MetricError> {
    if y.len() != p.len() {
        return Err(MetricError::LengthMismatch);
    }
    if y.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(y: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    check(y, p)?;
    if y.len() < 2 {
        return Err(MetricError::TooFew);
    }
    let m = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ConstantTruth);
    }
    let ss_res: f64 = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MreStats {
    pub avg: f64,
    pub p75: f64,
    pub p90: f64,
    pub frac_lt_2pct: f64,
    pub frac_lt_5pct: f64,
    pub frac_gt_20pct: f64,
    pub n_eval: usize,
    pub n_excluded: usize,
}

/// Linear interpolation of an ascending sample at rank `q·(n−1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(rank) as usize;
    let hi = libm::ceil(rank) as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Mean relative error statistics. Entries whose truth is exactly zero are
/// excluded and counted.
pub fn mre_stats(y: &[f64], p: &[f64]) -> Result<MreStats, MetricError> {
    check(y, p)?;
    let mut e: Vec<f64> = y.iter().zip(p).filter(|(t, _)| **t != 0.0).map(|(t, q)| libm::fabs(t - q) / libm::fabs(*t)).collect();
    let n_excluded = y.len() - e.len();
    if e.is_empty() {
        return Err(MetricError::AllExcluded);
    }
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    let frac = |f: &dyn Fn(f64) -> bool| e.iter().filter(|&&v| f(v)).count() as f64 / n;
    Ok(MreStats {
        avg: mean(&e),
        p75: percentile(&e, 0.75),
        p90: percentile(&e, 0.90),
        frac_lt_2pct: frac(&|v| v < 0.02),
        frac_lt_5pct: frac(&|v| v < 0.05),
        frac_gt_20pct: frac(&|v| v > 0.20),
        n_eval: e.len(),
        n_excluded,
    })
}

/// Root-mean-square error divided by the range of the truth.
pub fn nrmse(y: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    check(y, p)?;
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return Err(MetricError::ZeroRange);
    }
    let mse = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(libm::sqrt(mse) / (hi - lo))
}

/// Symmetric mean absolute percentage error as a fraction in `[0, 2]`,
/// with the number of entries excluded because `|y| + |ŷ| = 0`.
pub fn smape(y: &[f64], p: &[f64]) -> Result<(f64, usize), MetricError> {
    check(y, p)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in y.iter().zip(p) {
        let den = libm::fabs(*a) + libm::fabs(*b);
        if den == 0.0 {
            continue;
        }
        sum += 2.0 * libm::fabs(a - b) / den;
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::AllExcluded);
    }
    Ok((sum / n as f64, y.len() - n))
}

/// Sample standard deviation (`n − 1` denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    libm::sqrt(xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Silverman's rule `1.06 · σ̂ · n^(−1/5)`; `None` when the spread is zero.
pub fn silverman_bandwidth(xs: &[f64]) -> Option<f64> {
    let h = 1.06 * sample_std(xs) * libm::pow(xs.len() as f64, -0.2);
    (h > 0.0 && h.is_finite()).then_some(h)
}

const INV_SQRT_TWO_PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian kernel density of `values` evaluated at each grid point.
pub fn kde(values: &[f64], grid: &[f64], bandwidth: f64) -> Result<Vec<f64>, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(MetricError::BadBandwidth);
    }
    let norm = INV_SQRT_TWO_PI / (values.len() as f64 * bandwidth);
    Ok(grid
        .iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| {
                    let u = (x - v) / bandwidth;
                    libm::exp(-0.5 * u * u)
                })
                .sum::<f64>()
                * norm
        })
        .collect())
}

pub const KDE_GRID_POINTS: usize = 512;

/// Evenly spaced points covering `[min − 3h, max + 3h]` of `values`.
pub fn kde_grid(values: &[f64], h: f64) -> Vec<f64> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (b - a) / (KDE_GRID_POINTS - 1) as f64;
    (0..KDE_GRID_POINTS).map(|i| a + step * i as f64).collect()
}

pub fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2).zip(f.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}
