//! Order-fixed reductions used by the Monte-Carlo estimators.

use serde::Serialize;

/// Pairwise (cascade) summation in index order. The reduction tree depends
/// only on the slice length, so sums are bit-reproducible.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl MeanEstimate {
    /// Uses the unbiased sample variance; a single sample reports zero error.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_err: f64::NAN, samples: 0 };
        }
        let mean = pairwise_sum(samples) / n as f64;
        if n == 1 {
            return Self { mean, std_err: 0.0, samples: 1 };
        }
        let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Self { mean, std_err: (var / n as f64).sqrt(), samples: n }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }

    #[test]
    fn mean_estimate_of_constant_has_zero_error() {
        let est = MeanEstimate::from_samples(&[2.5; 10]);
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn standard_error_of_two_points() {
        // var = 2, se = sqrt(2/2) = 1
        let est = MeanEstimate::from_samples(&[0.0, 2.0]);
        assert_eq!(est.mean, 1.0);
        assert!((est.std_err - 1.0).abs() < 1e-15);
    }
}
