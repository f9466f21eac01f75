use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form Gaussian solutions of `∂u/∂t = ½Δu` on `Rⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianKind {
    /// The heat kernel itself, `(2πt)^{−n/2} e^{−|x|²/2t}`.
    Forward,
    /// Started from a Gaussian of variance `σ²` at `t = 0`.
    Initial,
    /// The solution `∝ (σ² − t)^{−n/2} e^{|x|²/2(σ²−t)}`, defined for `t < σ²`.
    Backward,
}

/// Values of a Gaussian solution and its log derivatives at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianValues {
    pub u: f64,
    pub f: f64,
    pub grad_f: Vec<f64>,
    pub grad_f_sq: f64,
    pub f_t: f64,
    /// `|∇f|² − 2f_t`, assembled from the components above.
    pub g: f64,
}

/// Heat kernel `p_t(x) = (2πt)^{−n/2} e^{−|x|²/2t}`.
pub fn heat_kernel(t: f64, x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (2.0 * PI * t).powf(-0.5 * n) * (-r2 / (2.0 * t)).exp()
}

pub fn gaussian_oracle(kind: GaussianKind, t: f64, x: &[f64], sigma2: f64) -> Result<GaussianValues> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("point must have at least one coordinate".into()));
    }
    let n = x.len() as f64;
    // s is the current variance, ds/dt its rate, sign the exponent's sign
    let (s, ds, sign) = match kind {
        GaussianKind::Forward => {
            if !(t > 0.0) {
                return Err(Error::Domain(format!("forward kernel needs t > 0, got {t}")));
            }
            (t, 1.0, -1.0)
        }
        GaussianKind::Initial => {
            if !(t >= 0.0 && sigma2 > 0.0) {
                return Err(Error::Domain(format!("initial Gaussian needs t ≥ 0 and σ² > 0 (t={t}, σ²={sigma2})")));
            }
            (sigma2 + t, 1.0, -1.0)
        }
        GaussianKind::Backward => {
            if !(t >= 0.0 && t < sigma2) {
                return Err(Error::Domain(format!("backward Gaussian blows up at t = σ²; need 0 ≤ t < {sigma2}, got {t}")));
            }
            (sigma2 - t, -1.0, 1.0)
        }
    };
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let f = -0.5 * n * (2.0 * PI * s).ln() + sign * r2 / (2.0 * s);
    let grad_f: Vec<f64> = x.iter().map(|v| sign * v / s).collect();
    let grad_f_sq: f64 = grad_f.iter().map(|g| g * g).sum();
    // d/dt of f through s(t)
    let f_t = ds * (-0.5 * n / s - sign * r2 / (2.0 * s * s));
    Ok(GaussianValues { u: f.exp(), f, grad_f, grad_f_sq, f_t, g: grad_f_sq - 2.0 * f_t })
}
