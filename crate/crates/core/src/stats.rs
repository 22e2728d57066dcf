//! Distribution helpers for confidence intervals and the exact signed-rank
//! test used to compare runs.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{FetsError, Result};

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal parameters are valid")
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(FetsError::invalid(format!(
            "normal quantile needs p in (0,1), got {p}"
        )));
    }
    Ok(standard_normal().inverse_cdf(p))
}

fn students_t(df: f64) -> Result<StudentsT> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(FetsError::invalid(format!(
            "t distribution needs positive finite degrees of freedom, got {df}"
        )));
    }
    StudentsT::new(0.0, 1.0, df).map_err(|e| FetsError::invalid(e.to_string()))
}

/// Student-t CDF with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> Result<f64> {
    Ok(students_t(df)?.cdf(t))
}

/// Student-t quantile with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(FetsError::invalid(format!(
            "t quantile needs p in (0,1), got {p}"
        )));
    }
    Ok(students_t(df)?.inverse_cdf(p))
}

/// Outcome of a one-sided Wilcoxon signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedRankTest {
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Number of non-zero differences that entered the ranking.
    pub n_nonzero: usize,
    /// P(W+ >= observed) under the null of symmetric differences.
    pub p_value: f64,
}

/// Exact one-sided Wilcoxon signed-rank test of `H1: a > b` over paired
/// samples. Zero differences are dropped and tied magnitudes receive average
/// ranks; the null distribution is enumerated exactly over the (possibly
/// tied) ranks. When every difference is zero the test carries no
/// information and reports `p = 0.5`.
pub fn wilcoxon_signed_rank_greater(a: &[f64], b: &[f64]) -> Result<SignedRankTest> {
    if a.len() != b.len() {
        return Err(FetsError::invalid(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 5 {
        return Err(FetsError::InsufficientData(format!(
            "signed-rank test needs at least 5 paired samples, got {}",
            a.len()
        )));
    }
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(FetsError::invalid("non-finite paired difference"));
    }
    if diffs.is_empty() {
        return Ok(SignedRankTest {
            w_plus: 0.0,
            n_nonzero: 0,
            p_value: 0.5,
        });
    }
    diffs.sort_by(|x, y| x.abs().total_cmp(&y.abs()));

    // Doubled average ranks are integers.
    let n = diffs.len();
    let mut doubled = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, times two
        let r2 = (i + 1) + (j + 1);
        for slot in doubled.iter_mut().take(j + 1).skip(i) {
            *slot = r2;
        }
        i = j + 1;
    }
    let observed2: usize = diffs
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total2: usize = doubled.iter().sum();

    let mut dist = vec![0.0f64; total2 + 1];
    dist[0] = 1.0;
    let mut reach = 0usize;
    for &r in &doubled {
        reach += r;
        for k in (0..=reach).rev() {
            let keep = dist[k] * 0.5;
            let add = if k >= r { dist[k - r] * 0.5 } else { 0.0 };
            dist[k] = keep + add;
        }
    }
    let p_value: f64 = dist[observed2..].iter().sum();
    Ok(SignedRankTest {
        w_plus: observed2 as f64 / 2.0,
        n_nonzero: n,
        p_value: p_value.min(1.0),
    })
}
