//! Small statistics toolkit: binomial intervals, least-squares fits, goodness-of-fit.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson(successes: u64, trials: u64, z: f64) -> Interval {
    if trials == 0 {
        return Interval { lower: 0.0, upper: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Interval {
        lower: (centre - half).max(0.0),
        upper: (centre + half).min(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Parameter("need at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Fit `y = a·ln x + b`.
pub fn log_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, y)
}

/// Fit `ln y = slope·ln x + c`; the slope is the scaling exponent.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.iter().chain(y).any(|v| *v <= 0.0) {
        return Err(Error::Parameter("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample chi-square homogeneity test on count vectors over the same categories.
/// Categories empty in both samples are dropped.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::Parameter("count vectors differ in length".into()));
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(Error::Parameter("empty sample".into()));
    }
    let total = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        for (obs, row) in [(x, na), (y, nb)] {
            let expected = row as f64 * col / total;
            stat += (obs as f64 - expected).powi(2) / expected;
        }
    }
    if cells < 2 {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0 });
    }
    let dist = ChiSquared::new((cells - 1) as f64)
        .map_err(|e| Error::Distribution(e.to_string()))?;
    Ok(TestResult {
        statistic: stat,
        p_value: 1.0 - dist.cdf(stat),
    })
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Parameter("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}

/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2 j² λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wilson_known_value() {
        // 50/100 at z = 1.96: centre 0.5, half-width 0.0962
        let ci = wilson(50, 100, Z95);
        assert_abs_diff_eq!(ci.lower, 0.4038, epsilon = 1e-3);
        assert_abs_diff_eq!(ci.upper, 0.5962, epsilon = 1e-3);
        let all = wilson(100, 100, Z95);
        assert_eq!(all.upper, 1.0);
        assert!(all.lower > 0.96);
    }

    #[test]
    fn exact_line_fit() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert_abs_diff_eq!(f.slope, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.intercept, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        let n = [32.0, 64.0, 128.0];
        let t: Vec<f64> = n.iter().map(|v: &f64| 5.0 * v * v).collect();
        assert_abs_diff_eq!(log_log_fit(&n, &t).unwrap().slope, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        assert!(ks_two_sample(&a, &a).unwrap().p_value > 0.99);
        let b: Vec<f64> = a.iter().map(|v| v + 250.0).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.5, epsilon = 1e-9);
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn chi_square_detects_difference() {
        let same = chi_square_two_sample(&[100, 200, 300], &[100, 200, 300]).unwrap();
        assert_abs_diff_eq!(same.statistic, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(same.p_value, 1.0, epsilon = 1e-12);
        let diff = chi_square_two_sample(&[300, 200, 100], &[100, 200, 300]).unwrap();
        assert!(diff.p_value < 1e-10);
    }
}
