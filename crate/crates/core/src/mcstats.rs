//! Monte Carlo summaries and goodness-of-fit tests used by the simulators,
//! the experiment runner and the acceptance suite.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// A Monte Carlo mean with its standard error.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// `(self - target) / se`, or 0 when both coincide with zero spread.
    pub fn z(&self, target: f64) -> f64 {
        let diff = self.mean - target;
        if self.se > 0.0 {
            diff / self.se
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }

    /// Difference of two independent estimates.
    pub fn minus(&self, other: &Estimate) -> Estimate {
        Estimate {
            mean: self.mean - other.mean,
            se: self.se.hypot(other.se),
        }
    }

    /// Relative to a fixed target: `(mean - target) / target`.
    pub fn relative_to(&self, target: f64) -> Estimate {
        Estimate {
            mean: (self.mean - target) / target,
            se: self.se / target.abs(),
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub const DEFAULT_BATCHES: usize = 50;

/// Mean of an autocorrelated series with a batch-means standard error.
///
/// Uses `batches` equal batches (the tail remainder is dropped from the
/// error estimate but kept in the mean). Falls back to the i.i.d. formula
/// when the series is too short to batch.
pub fn batch_means(xs: &[f64], batches: usize) -> Estimate {
    assert!(!xs.is_empty(), "cannot summarize an empty series");
    let m = mean(xs);
    let b = batches.max(2);
    let len = xs.len() / b;
    if len < 2 {
        let se = if xs.len() > 1 {
            (sample_variance(xs) / xs.len() as f64).sqrt()
        } else {
            0.0
        };
        return Estimate { mean: m, se };
    }
    let means: Vec<f64> = xs.chunks_exact(len).take(b).map(mean).collect();
    let se = (sample_variance(&means) / b as f64).sqrt();
    Estimate { mean: m, se }
}

/// Kolmogorov-Smirnov comparison of positive integer samples against the
/// geometric distribution on `{1, 2, ...}` with success probability `p`.
#[derive(Copy, Clone, Debug, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub n: usize,
    pub pass: bool,
}

/// Asymptotic Kolmogorov critical value `c(alpha) / sqrt(n)`. For a discrete
/// reference distribution this is conservative.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    ((-0.5 * (alpha / 2.0).ln()).sqrt()) / (n as f64).sqrt()
}

pub fn ks_geometric(samples: &[i64], p: f64, alpha: f64) -> KsResult {
    let n = samples.len();
    assert!(n > 0);
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let max = *sorted.last().unwrap();
    let mut stat: f64 = 0.0;
    let mut idx = 0;
    // Both CDFs jump only at integers, so the supremum is attained there.
    for k in 0..=max {
        while idx < n && sorted[idx] <= k {
            idx += 1;
        }
        let emp = idx as f64 / n as f64;
        let cdf = if k <= 0 { 0.0 } else { 1.0 - (1.0 - p).powi(k as i32) };
        stat = stat.max((emp - cdf).abs());
    }
    let critical = ks_critical(alpha, n);
    KsResult {
        statistic: stat,
        critical,
        n,
        pass: stat <= critical,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit of `counts` against `probs`. Cells with expected
/// count below 5 are pooled into one cell.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> ChiSquareResult {
    assert_eq!(counts.len(), probs.len());
    let total: u64 = counts.iter().sum();
    let n = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n;
        if e < 5.0 {
            pooled_obs += c as f64;
            pooled_exp += e;
        } else {
            cells.push((c as f64, e));
        }
    }
    if pooled_exp > 0.0 || pooled_obs > 0.0 {
        cells.push((pooled_obs, pooled_exp));
    }
    let statistic: f64 = cells
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e) * (o - e) / e } else if o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else if statistic.is_infinite() {
        0.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(statistic)
    };
    ChiSquareResult {
        statistic,
        dof,
        p_value,
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Half the L1 distance between two probability vectors.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
