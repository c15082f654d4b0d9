//! Small statistics helpers for the experiment summaries.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Variance with divisor `n`.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean from the `n - 1` sample variance.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let var = population_variance(xs) * n as f64 / (n - 1) as f64;
    (var / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    /// Non-zero differences used.
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sided exact sign test of `H1: median(x - y) > 0`. Ties are dropped.
pub fn sign_test_greater(x: &[f64], y: &[f64]) -> TestResult {
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = d.len();
    let k = d.iter().filter(|&&v| v > 0.0).count();
    let p_value = if n == 0 || k == 0 {
        1.0
    } else {
        let b = Binomial::new(0.5, n as u64).expect("valid binomial");
        b.sf(k as u64 - 1)
    };
    TestResult {
        n,
        statistic: k as f64,
        p_value,
    }
}

/// One-sided Wilcoxon signed-rank test of `H1: x > y` (paired), normal
/// approximation with tie and continuity corrections. Zero differences are
/// dropped.
pub fn wilcoxon_greater(x: &[f64], y: &[f64]) -> TestResult {
    let mut d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = d.len();
    if n == 0 {
        return TestResult {
            n,
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    d.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut w_plus = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        w_plus += d[i..=j].iter().filter(|&&v| v > 0.0).count() as f64 * rank;
        i = j + 1;
    }
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p_value = if var <= 0.0 {
        if w_plus > mu {
            0.0
        } else {
            1.0
        }
    } else {
        let z = (w_plus - mu - 0.5) / var.sqrt();
        Normal::standard().sf(z)
    };
    TestResult {
        n,
        statistic: w_plus,
        p_value,
    }
}
