//! Summary statistics and percentile-bootstrap confidence intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator; 0 for one sample).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Percentile bootstrap of the mean. The bounds are widened to include the
/// point estimate if resampling skew ever pushes it outside.
pub fn bootstrap_ci(
    samples: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut StreamRng,
) -> Result<ConfidenceInterval, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::Stats("bootstrap of an empty sample".into()));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(HarnessError::Stats(format!("bad bootstrap settings: level {level}, {resamples} resamples")));
    }
    let n = samples.len();
    let point = mean(samples);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let idx = (p * (resamples - 1) as f64).round() as usize;
        means[idx.min(resamples - 1)]
    };
    let tail = (1.0 - level) / 2.0;
    Ok(ConfidenceInterval {
        point,
        lower: q(tail).min(point),
        upper: q(1.0 - tail).max(point),
        level,
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn constant_samples_give_zero_width() {
        let mut r = rng::stream(0, &[]);
        let ci = bootstrap_ci(&[2.5; 7], 0.95, 1000, &mut r).unwrap();
        assert_eq!((ci.lower, ci.point, ci.upper), (2.5, 2.5, 2.5));
    }

    #[test]
    fn binary_samples_stay_in_range() {
        let mut r = rng::stream(1, &[]);
        let ci = bootstrap_ci(&[0.0, 1.0], 0.95, 5000, &mut r).unwrap();
        assert!(ci.lower >= 0.0 && ci.upper <= 1.0 && ci.lower <= ci.point && ci.point <= ci.upper);
    }

    #[test]
    fn empty_is_an_error() {
        let mut r = rng::stream(0, &[]);
        assert!(bootstrap_ci(&[], 0.95, 10, &mut r).is_err());
    }

    #[test]
    fn std_dev_examples() {
        assert_eq!(std_dev(&[1.0]), 0.0);
        assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
