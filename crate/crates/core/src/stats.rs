//! Monte Carlo summaries: batch-means standard errors, Kolmogorov–Smirnov
//! tests and small regressions.

use serde::{Deserialize, Serialize};
use libm::erfc;

/// Estimate with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Est {
    pub value: f64,
    pub se: f64,
}

impl Est {
    pub fn new(value: f64, se: f64) -> Self {
        Self { value, se }
    }

    /// `|value - target| <= k·se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn mean(xs: &[f64]) -> f64 {
    crate::numeric::pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    crate::numeric::pairwise_sum(&sq) / (xs.len() as f64 - 1.0)
}

/// Applies `stat` to the whole sample and to `batches` contiguous batches;
/// the standard error is the spread of the batch values over `√batches`.
/// Replicates must be in their canonical order for reproducibility.
pub fn batch_stat<T>(xs: &[T], batches: usize, stat: impl Fn(&[T]) -> f64) -> Est {
    let value = stat(xs);
    let b = batches.min(xs.len()).max(2);
    let size = xs.len() / b;
    if size == 0 {
        return Est::new(value, f64::NAN);
    }
    let per: Vec<f64> = (0..b).map(|k| stat(&xs[k * size..(k + 1) * size])).collect();
    let se = (variance(&per) / b as f64).sqrt();
    Est::new(value, se)
}

/// Batch-means estimate of `E[x]`.
pub fn batch_mean(xs: &[f64], batches: usize) -> Est {
    batch_stat(xs, batches, mean)
}

/// Kolmogorov–Smirnov one-sample result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov distribution tail `P(K > λ)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // small-λ form converges faster here
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * c).exp()
            })
            .sum();
        return (1.0 - (std::f64::consts::TAU).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `xs` against `cdf`, with the Stephens small-sample
/// correction of the asymptotic p-value.
pub fn ks_test(xs: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let rn = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_tail((rn + 0.12 + 0.11 / rn) * d),
        n: s.len(),
    }
}

pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let num: Vec<f64> = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).collect();
    let den: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    crate::numeric::pairwise_sum(&num) / crate::numeric::pairwise_sum(&den)
}

/// Ordinary least-squares slope of `y` on `x` with its standard error
/// (`NaN` with only two points).
pub fn ols_slope(x: &[f64], y: &[f64]) -> Est {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - my - slope * (a - mx);
            r * r
        })
        .sum();
    let se = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    Est::new(slope, se)
}

/// Weighted least-squares slope with weights `1/se²`; the slope SE comes
/// from the weights alone.
pub fn weighted_slope(x: &[f64], y: &[f64], y_se: &[f64]) -> Est {
    let w: Vec<f64> = y_se.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    Est::new(sxy / sxx, (1.0 / sxx).sqrt())
}

/// Empirical covariance (divisor `m - 1`) of `m` row vectors.
pub fn covariance(rows: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    let d = rows.first().map_or(0, Vec::len);
    let m = rows.len() as f64;
    let mu: Vec<f64> = (0..d)
        .map(|k| mean(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect();
    nalgebra::DMatrix::from_fn(d, d, |j, k| {
        let terms: Vec<f64> = rows.iter().map(|r| (r[j] - mu[j]) * (r[k] - mu[k])).collect();
        crate::numeric::pairwise_sum(&terms) / (m - 1.0)
    })
}

/// Empirical `q`-quantile by linear interpolation of order statistics.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// `ln((1/m) Σ exp(x_i))` computed stably, with a delta-method standard
/// error from batch means of `exp(x_i - max)`.
pub fn log_mean_exp(xs: &[f64], batches: usize) -> Est {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = xs.iter().map(|x| (x - mx).exp()).collect();
    let e = batch_mean(&scaled, batches);
    Est::new(mx + e.value.ln(), e.se / e.value)
}
