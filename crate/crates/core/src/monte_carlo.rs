//! Baseline Monte Carlo estimator: empirical feasibility fractions with
//! normal-approximation (single run) and Student-t (across runs) confidence
//! intervals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{normal_quantile, student_t_quantile};

/// Which estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Srd,
    Kde,
    Mc,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Srd => write!(f, "srd"),
            Method::Kde => write!(f, "kde"),
            Method::Mc => write!(f, "mc"),
        }
    }
}

/// A probability estimate with provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub value: f64,
    pub method: Method,
    pub n: usize,
    /// Optional (lo, hi, level).
    pub ci: Option<(f64, f64, f64)>,
    pub seed: u64,
}

impl ProbabilityEstimate {
    pub fn new(value: f64, method: Method, n: usize, seed: u64) -> Self {
        debug_assert!((0.0..=1.0).contains(&value));
        ProbabilityEstimate {
            value,
            method,
            n,
            ci: None,
            seed,
        }
    }

    pub fn with_wald_ci(mut self, level: f64) -> Self {
        let z = normal_quantile(0.5 + level / 2.0);
        let half = z * (self.value * (1.0 - self.value) / self.n as f64).sqrt();
        self.ci = Some(((self.value - half).max(0.0), (self.value + half).min(1.0), level));
        self
    }
}

/// Fraction of indices 0..n satisfying the predicate; the counting reduction
/// is exact, so parallel evaluation order cannot change the result.
pub fn mc_probability<F>(n: usize, seed: u64, predicate: F) -> ProbabilityEstimate
where
    F: Fn(usize) -> bool + Sync,
{
    assert!(n >= 1);
    let hits: usize = (0..n).into_par_iter().filter(|&i| predicate(i)).count();
    ProbabilityEstimate::new(hits as f64 / n as f64, Method::Mc, n, seed).with_wald_ci(0.95)
}

/// Across-run interval: mean +/- t_{1-(1-level)/2, k-1} * s / sqrt(k).
pub fn confidence_interval_across_runs(values: &[f64], level: f64) -> Result<(f64, f64)> {
    let k = values.len();
    if k < 2 {
        return Err(Error::InsufficientRuns { runs: k });
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k as f64 - 1.0);
    let t = student_t_quantile(0.5 + level / 2.0, (k - 1) as f64);
    let half = t * (var / k as f64).sqrt();
    Ok((mean - half, mean + half))
}

/// Single-run Wald interval for a binomial fraction.
pub fn confidence_interval_single_run(p_hat: f64, n: usize, level: f64) -> (f64, f64) {
    let z = normal_quantile(0.5 + level / 2.0);
    let half = z * (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    (p_hat - half, p_hat + half)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_predicate_gives_one() {
        let e = mc_probability(1000, 0, |_| true);
        assert_eq!(e.value, 1.0);
        let (lo, hi, level) = e.ci.unwrap();
        assert_eq!(level, 0.95);
        assert!(lo <= e.value && e.value <= hi);
    }

    #[test]
    fn across_runs_ci_reproduces_published_interval() {
        // the eight MC fractions of the single-edge table
        let vals = [0.8299, 0.8288, 0.8283, 0.8295, 0.8309, 0.8277, 0.8283, 0.8258];
        let (lo, hi) = confidence_interval_across_runs(&vals, 0.95).unwrap();
        assert!((lo - 0.8274).abs() < 5e-5, "lo={lo}");
        assert!((hi - 0.8299).abs() < 5e-5, "hi={hi}");
    }

    #[test]
    fn identical_runs_give_zero_width() {
        let (lo, hi) = confidence_interval_across_runs(&[0.5, 0.5, 0.5], 0.95).unwrap();
        assert_eq!(lo, hi);
        assert!(confidence_interval_across_runs(&[0.5], 0.95).is_err());
    }

    #[test]
    fn wald_half_width_reference() {
        let (lo, hi) = confidence_interval_single_run(0.5, 10_000, 0.95);
        let half = (hi - lo) / 2.0;
        assert!((half - 0.0098).abs() < 1e-4, "half={half}");
    }
}
