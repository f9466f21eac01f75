//! Monte Carlo reductions.
//!
//! All sums go through [`pairwise_sum`] over per-path values collected in
//! path order, so estimates are bit-identical for any thread count.

use serde::{Deserialize, Serialize};

/// A Monte Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl MCEstimate {
    pub fn exact(value: f64, n_paths: usize, seed: u64) -> Self {
        Self { value, stderr: 0.0, n_paths, seed }
    }

    /// `|value − target| ≤ k·stderr + floor`.
    pub fn within(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr + floor
    }
}

/// Pairwise (cascade) summation; error grows as O(log n · ε).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

pub fn estimate(xs: &[f64], seed: u64) -> MCEstimate {
    let (value, stderr) = mean_stderr(xs);
    MCEstimate { value, stderr, n_paths: xs.len(), seed }
}

/// Self-normalised weighted mean `Σ wᵢxᵢ / Σ wᵢ` with delta-method error.
pub fn weighted_ratio(weights: &[f64], xs: &[f64], seed: u64) -> MCEstimate {
    assert_eq!(weights.len(), xs.len());
    let n = xs.len();
    let wx: Vec<f64> = weights.iter().zip(xs).map(|(w, x)| w * x).collect();
    let wbar = mean(weights);
    let r = pairwise_sum(&wx) / pairwise_sum(weights);
    let stderr = if n < 2 {
        0.0
    } else {
        let dev: Vec<f64> = weights
            .iter()
            .zip(xs)
            .map(|(w, x)| {
                let d = w * (x - r);
                d * d
            })
            .collect();
        (pairwise_sum(&dev) / ((n * (n - 1)) as f64)).sqrt() / wbar
    };
    MCEstimate { value: r, stderr, n_paths: n, seed }
}

/// Kish effective sample size `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s = pairwise_sum(weights);
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    s * s / pairwise_sum(&sq)
}
