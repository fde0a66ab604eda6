//! Summary statistics for Monte Carlo ensembles.

use rand::Rng;

use crate::sim::RngSeed;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Percentile bootstrap interval for the mean at confidence `level`.
pub fn bootstrap_mean_ci(x: &[f64], reps: usize, level: f64, seed: RngSeed) -> (f64, f64) {
    assert!(!x.is_empty() && reps > 0);
    let mut rng = seed.rng();
    let n = x.len();
    let mut means: Vec<f64> =
        (0..reps).map(|_| (0..n).map(|_| x[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * reps as f64).floor() as usize).min(reps - 1)];
    (at(alpha), at(1.0 - alpha))
}
