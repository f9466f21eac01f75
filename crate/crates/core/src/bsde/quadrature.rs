//! Small special-function helpers for the closed-form terminal families.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Modified Bessel functions `I_0(a), …, I_kmax(a)` by their power series.
///
/// Accurate to a few ulps for `|a| ≲ 30`, which covers every terminal
/// amplitude the crate accepts.
pub fn bessel_i_sequence(a: f64, kmax: usize) -> Vec<f64> {
    let half = 0.5 * a;
    let q = half * half;
    let mut lead = 1.0; // (a/2)^k / k!
    (0..=kmax)
        .map(|k| {
            if k > 0 {
                lead *= half / k as f64;
            }
            let mut term = lead;
            let mut sum = term;
            let mut j = 0.0;
            while term.abs() > 1e-18 * sum.abs() && j < 500.0 {
                j += 1.0;
                term *= q / (j * (j + k as f64));
                sum += term;
            }
            sum
        })
        .collect()
}

/// Probabilists' Gauss–Hermite rule for the standard normal law
/// (`Σ wᵢ g(zᵢ) ≈ E g(Z)`), via the Golub–Welsch eigenproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > 200 {
            return Err(Error::Quadrature(format!("unsupported Gauss-Hermite order {order}")));
        }
        let jacobi = DMatrix::from_fn(order, order, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Quadrature(format!("Gauss-Hermite weights sum to {total}")));
        }
        Ok(Self { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1 / total).collect() })
    }

    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * g(z)).sum()
    }
}
