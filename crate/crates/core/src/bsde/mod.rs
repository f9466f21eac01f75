//! Quadratic BSDE `dY = −½|Z|² dt + Z·dw`, `Y_T = f₀(x + w_T)`.
//!
//! The Markovian solution is entropic, `Y_t = log E[e^{f₀(x + w_T)} | F_t]`,
//! and `Z_t = ∇Y` evaluated along the path. The closed forms in
//! [`entropic_oracle`] supply `(Y, Z, ∇²Y)` for every shipped terminal
//! family; [`solve_bsde_mc`] walks them along seeded Brownian paths and
//! accumulates the discrete residual, `∫|Z|²` and Girsanov log-densities.

mod liyau;
mod mc;
mod quadrature;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::Psi;
use crate::error::{Error, Result};

pub use liyau::{liyau_bsde_demo, riccati_on_torus, LiyauDemo, LiyauDemoConfig, LiyauTerminal};
pub use mc::{
    bmo_norm_estimate, girsanov_weights, max_principle_check, q_representation_check, solve_bsde_mc,
    submartingale_diagnostic, BsdePath, BsdePaths, GirsanovWeights, McConfig, ResidualStats, StepViolation,
    SubmartingaleReport, WeightScale, ESS_FLOOR,
};
pub use quadrature::{bessel_i_sequence, GaussHermite};

/// Terminal functions `f₀` with closed-form (or quadrature) entropic solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Terminal {
    Constant { c: f64 },
    /// `b·x`; unbounded, used for exactness checks.
    Linear { b: Vec<f64> },
    /// `a·Σ cos xᵢ`, periodic with period `2π`.
    TorusCosine { a: f64 },
    /// `a·tanh(x₀/width)`, a smoothed two-valued step.
    SmoothStep { a: f64, width: f64 },
    /// `log p_{t₀}(x)`, the logarithm of the heat kernel at time `t₀`.
    ForwardGaussianLog { t0: f64 },
}

impl Terminal {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Terminal::Constant { c } => *c,
            Terminal::Linear { b } => b.iter().zip(x).map(|(b, x)| b * x).sum(),
            Terminal::TorusCosine { a } => a * x.iter().map(|v| v.cos()).sum::<f64>(),
            Terminal::SmoothStep { a, width } => a * (x[0] / width).tanh(),
            Terminal::ForwardGaussianLog { t0 } => crate::heatpde::heat_kernel(*t0, x).ln(),
        }
    }

    /// `‖f₀‖∞` when finite.
    pub fn sup_norm(&self, dim: usize) -> Option<f64> {
        match self {
            Terminal::Constant { c } => Some(c.abs()),
            Terminal::TorusCosine { a } => Some(a.abs() * dim as f64),
            Terminal::SmoothStep { a, .. } => Some(a.abs()),
            Terminal::Linear { b } if b.iter().all(|v| *v == 0.0) => Some(0.0),
            Terminal::Linear { .. } | Terminal::ForwardGaussianLog { .. } => None,
        }
    }
}

/// Largest cosine amplitude accepted (the Bessel series is exact well beyond it).
const MAX_COSINE_AMPLITUDE: f64 = 20.0;
/// Truncation of the standard-normal integral for the smooth-step family.
const STEP_CUTOFF: f64 = 9.0;

#[derive(Debug, Clone, PartialEq)]
enum Prepared {
    None,
    Bessel(Vec<f64>),
}

/// A Markovian quadratic BSDE with a closed-form terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeProblem {
    pub horizon: f64,
    pub terminal: Terminal,
    pub x0: Vec<f64>,
    /// Constant added to the terminal (and hence to `Y`).
    pub offset: f64,
    prepared: Prepared,
}

/// Serializable description of a [`BsdeProblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeSpec {
    pub horizon: f64,
    pub terminal: Terminal,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

impl BsdeProblem {
    pub fn new(horizon: f64, terminal: Terminal, x0: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if x0.is_empty() {
            return Err(Error::InvalidParameter("start point must have at least one coordinate".into()));
        }
        let prepared = match &terminal {
            Terminal::Constant { .. } => Prepared::None,
            Terminal::Linear { b } => {
                if b.len() != x0.len() {
                    return Err(Error::DimensionMismatch { expected: x0.len(), got: b.len() });
                }
                Prepared::None
            }
            Terminal::TorusCosine { a } => {
                if !(a.abs() <= MAX_COSINE_AMPLITUDE) {
                    return Err(Error::InvalidParameter(format!("cosine amplitude must be ≤ {MAX_COSINE_AMPLITUDE}")));
                }
                let mut coeffs = bessel_i_sequence(*a, 400);
                let cut = coeffs.iter().rposition(|c| c.abs() > 1e-18 * coeffs[0]).unwrap_or(0);
                coeffs.truncate(cut + 1);
                Prepared::Bessel(coeffs)
            }
            Terminal::SmoothStep { a, width } => {
                if !(width > &0.0) || !a.is_finite() {
                    return Err(Error::InvalidParameter("smooth step needs width > 0 and finite amplitude".into()));
                }
                Prepared::None
            }
            Terminal::ForwardGaussianLog { t0 } => {
                if !(t0 > &0.0) {
                    return Err(Error::InvalidParameter("forward Gaussian terminal needs t0 > 0".into()));
                }
                Prepared::None
            }
        };
        let problem = Self { horizon, terminal, x0, offset: 0.0, prepared };
        problem.verify_quadrature()?;
        Ok(problem)
    }

    pub fn from_spec(spec: &BsdeSpec) -> Result<Self> {
        Ok(Self::new(spec.horizon, spec.terminal.clone(), spec.x0.clone())?.with_offset(spec.offset))
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    /// `ξ = f₀(x) + offset`.
    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        self.terminal.value(x) + self.offset
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn sup_norm(&self) -> Option<f64> {
        self.terminal.sup_norm(self.dim()).map(|s| s + self.offset.abs())
    }

    /// Compare the working quadrature against a refined one on a handful of
    /// points; the smooth-step family is the only user.
    fn verify_quadrature(&self) -> Result<()> {
        let Terminal::SmoothStep { a, width } = self.terminal else { return Ok(()) };
        for frac in [1.0, 0.5, 0.1] {
            for x in [-2.0 * width, 0.0, 0.3 * width, 2.0 * width] {
                let tau = frac * self.horizon;
                let lo = step_oracle(a, width, tau, x, 1.0).0;
                let hi = step_oracle(a, width, tau, x, 2.0).0;
                if (hi - lo).abs() > 1e-9 * (1.0 + hi.abs()) {
                    return Err(Error::Quadrature(format!(
                        "smooth-step quadrature not converged: {:.3e} at tau={tau}, x={x}",
                        (hi - lo).abs()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `(Y, Z, ∇²Y)` at one space-time point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleValue {
    pub y: f64,
    pub z: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// `(log u, u'/u, u''/u − (u'/u)²)` for `u(τ, x) = E e^{a cos(x + w_τ)}`.
fn cosine_oracle(coeffs: &[f64], tau: f64, x: f64) -> (f64, f64, f64) {
    let (s1, c1) = x.sin_cos();
    let (mut c_prev, mut s_prev) = (1.0, 0.0);
    let (mut ck, mut sk) = (c1, s1);
    let (mut u, mut du, mut d2u) = (coeffs[0], 0.0, 0.0);
    for (k, &ik) in coeffs.iter().enumerate().skip(1) {
        let kf = k as f64;
        let w = 2.0 * ik * (-0.5 * kf * kf * tau).exp();
        u += w * ck;
        du -= w * kf * sk;
        d2u -= w * kf * kf * ck;
        // Chebyshev recurrences for cos(kx), sin(kx)
        let c_next = 2.0 * c1 * ck - c_prev;
        let s_next = 2.0 * c1 * sk - s_prev;
        c_prev = ck;
        s_prev = sk;
        ck = c_next;
        sk = s_next;
    }
    let z = du / u;
    (u.ln(), z, d2u / u - z * z)
}

/// Entropic solution for `a·tanh(x/width)` by the trapezoid rule in the
/// standard-normal variable on `[−9, 9]`.
///
/// `tanh` has poles at distance `π·width/2` from the real axis, so a spacing
/// of a fifth of that distance (in units of `√τ`) gives errors of order
/// `e^{−10π}`; `refine` divides the spacing further.
fn step_oracle(a: f64, width: f64, tau: f64, x: f64, refine: f64) -> (f64, f64, f64) {
    if tau == 0.0 {
        let th = (x / width).tanh();
        let sech2 = 1.0 - th * th;
        return (a * th, a / width * sech2, -2.0 * a / (width * width) * th * sech2);
    }
    let sd = tau.sqrt();
    let pole = 0.5 * std::f64::consts::PI * width / sd;
    let spacing = (0.2f64).min(pole / 5.0) / refine;
    let half = (STEP_CUTOFF / spacing).ceil() as i64;
    // log-sum-exp with the bounded shift |a|
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for j in -half..=half {
        let z = j as f64 * spacing;
        let y = x + sd * z;
        let th = (y / width).tanh();
        let sech2 = 1.0 - th * th;
        let d1 = a / width * sech2;
        let d2 = -2.0 * a / (width * width) * th * sech2;
        let e = (-0.5 * z * z + a * th - a.abs()).exp();
        s0 += e;
        s1 += e * d1;
        s2 += e * (d2 + d1 * d1);
    }
    let norm = spacing / (2.0 * std::f64::consts::PI).sqrt();
    let z = s1 / s0;
    ((s0 * norm).ln() + a.abs(), z, s2 / s0 - z * z)
}

/// `Y_t = log E[e^{f₀(state + w_{T−t})}]`, its gradient `Z` and Hessian.
pub fn entropic_oracle(problem: &BsdeProblem, t: f64, state: &[f64]) -> Result<OracleValue> {
    let n = problem.dim();
    if state.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: state.len() });
    }
    let tau = problem.horizon - t;
    if !(tau >= -1e-12) || !(t >= 0.0) {
        return Err(Error::Domain(format!("time {t} outside [0, {}]", problem.horizon)));
    }
    let tau = tau.max(0.0);
    let mut z = DVector::zeros(n);
    let mut hessian = DMatrix::zeros(n, n);
    let y = problem.offset
        + match (&problem.terminal, &problem.prepared) {
        (Terminal::Constant { c }, _) => *c,
        (Terminal::Linear { b }, _) => {
            let bsq: f64 = b.iter().map(|v| v * v).sum();
            z.copy_from_slice(b);
            b.iter().zip(state).map(|(b, x)| b * x).sum::<f64>() + 0.5 * bsq * tau
        }
        (Terminal::TorusCosine { .. }, Prepared::Bessel(coeffs)) => {
            let mut y = 0.0;
            for i in 0..n {
                let (yi, zi, hi) = cosine_oracle(coeffs, tau, state[i]);
                y += yi;
                z[i] = zi;
                hessian[(i, i)] = hi;
            }
            y
        }
        (Terminal::SmoothStep { a, width }, _) => {
            let (y, z0, h0) = step_oracle(*a, *width, tau, state[0], 1.0);
            z[0] = z0;
            hessian[(0, 0)] = h0;
            y
        }
        (Terminal::ForwardGaussianLog { t0 }, _) => {
            let s = t0 + tau;
            for i in 0..n {
                z[i] = -state[i] / s;
                hessian[(i, i)] = -1.0 / s;
            }
            crate::heatpde::heat_kernel(s, state).ln()
        }
        _ => unreachable!("terminal data prepared in BsdeProblem::new"),
        };
    if !y.is_finite() || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("entropic oracle at t={t}")));
    }
    Ok(OracleValue { y, z, hessian })
}

/// A BSDE driver `h(y, |z|²)` with `dY = h dt + Z·dw`.
pub trait Driver: Send + Sync {
    fn name(&self) -> String;
    fn h(&self, y: f64, z_sq: f64) -> f64;
    fn h_y(&self, y: f64, z_sq: f64) -> f64;
    /// Map the entropic solution `(log u, ∇log u, ∇²log u)` to this driver's solution.
    fn transform(&self, v: &OracleValue) -> OracleValue;
}

/// The entropic driver `h = −½|z|²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EntropicDriver;

impl Driver for EntropicDriver {
    fn name(&self) -> String {
        "entropic".into()
    }
    fn h(&self, _: f64, z_sq: f64) -> f64 {
        -0.5 * z_sq
    }
    fn h_y(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn transform(&self, v: &OracleValue) -> OracleValue {
        v.clone()
    }
}

/// Driver of `Y = ψ(u)`: `h = ½ ψ″(ψ⁻¹(y)) / ψ′(ψ⁻¹(y))² · |z|²`.
pub struct PsiDriver<P: Psi>(pub P);

impl<P: Psi> Driver for PsiDriver<P> {
    fn name(&self) -> String {
        format!("psi:{}", self.0.name())
    }
    fn h(&self, y: f64, z_sq: f64) -> f64 {
        let u = self.0.inverse(y);
        let d1 = self.0.d1(u);
        0.5 * self.0.d2(u) / (d1 * d1) * z_sq
    }
    fn h_y(&self, y: f64, z_sq: f64) -> f64 {
        let u = self.0.inverse(y);
        let (d1, d2, d3) = (self.0.d1(u), self.0.d2(u), self.0.d3(u));
        0.5 * (d3 * d1 - 2.0 * d2 * d2) / d1.powi(4) * z_sq
    }
    fn transform(&self, v: &OracleValue) -> OracleValue {
        let u = v.y.exp();
        let (d1, d2) = (self.0.d1(u), self.0.d2(u));
        // ∇u = u∇y, ∇²u = u(∇y∇yᵀ + ∇²y)
        let grad_u = &v.z * u;
        let outer = &v.z * v.z.transpose();
        let hess_u = (&outer + &v.hessian) * u;
        OracleValue {
            y: self.0.value(u),
            z: &grad_u * d1,
            hessian: &grad_u * grad_u.transpose() * d2 + hess_u * d1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{LogPsi, PowerPsi};

    fn problem(terminal: Terminal, x0: Vec<f64>) -> BsdeProblem {
        BsdeProblem::new(1.0, terminal, x0).unwrap()
    }

    #[test]
    fn constant_and_linear() {
        let p = problem(Terminal::Constant { c: 0.3 }, vec![1.0]);
        let v = entropic_oracle(&p, 0.2, &[5.0]).unwrap();
        assert_eq!((v.y, v.z[0]), (0.3, 0.0));
        let p = problem(Terminal::Linear { b: vec![1.0, -2.0] }, vec![0.0, 0.0]);
        let v = entropic_oracle(&p, 0.5, &[0.5, 1.0]).unwrap();
        assert!((v.y - (0.5 - 2.0 + 0.5 * 5.0 * 0.5)).abs() < 1e-15);
        assert_eq!(v.z.as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn cosine_matches_terminal_and_quadrature() {
        let p = problem(Terminal::TorusCosine { a: 0.5 }, vec![0.0]);
        for x in [-2.0, 0.0, 0.7, 3.0] {
            let v = entropic_oracle(&p, 1.0, &[x]).unwrap();
            assert!((v.y - 0.5 * f64::cos(x)).abs() < 1e-14);
            assert!((v.z[0] + 0.5 * f64::sin(x)).abs() < 1e-14);
        }
        // τ = 1 against brute Gauss–Hermite
        let gh = GaussHermite::new(120).unwrap();
        for x in [0.0, 1.1] {
            let v = entropic_oracle(&p, 0.0, &[x]).unwrap();
            let q = gh.expect(|z| (0.5 * (x + z).cos()).exp()).ln();
            assert!((v.y - q).abs() < 1e-12, "{} vs {q}", v.y);
        }
    }

    #[test]
    fn translation_and_jensen() {
        let base = problem(Terminal::TorusCosine { a: 0.5 }, vec![0.0]);
        let gh = GaussHermite::new(80).unwrap();
        for x in [0.0, 1.3] {
            let v = entropic_oracle(&base, 0.25, &[x]).unwrap();
            let mean = gh.expect(|z| 0.5 * (x + 0.75f64.sqrt() * z).cos());
            assert!(v.y >= mean);
        }
        let shifted = base.clone().with_offset(2.5);
        let va = entropic_oracle(&base, 0.3, &[1.0]).unwrap();
        let vb = entropic_oracle(&shifted, 0.3, &[1.0]).unwrap();
        assert!((vb.y - va.y - 2.5).abs() < 1e-15);
        assert_eq!(va.z, vb.z);
        assert_eq!(shifted.sup_norm(), Some(3.0));
    }

    #[test]
    fn smooth_step_derivatives() {
        let p = problem(Terminal::SmoothStep { a: 0.8, width: 0.5 }, vec![0.0]);
        let h = 1e-5;
        for (t, x) in [(0.0, 0.2), (0.6, -0.4), (0.99, 1.0)] {
            let v = entropic_oracle(&p, t, &[x]).unwrap();
            let up = entropic_oracle(&p, t, &[x + h]).unwrap();
            let dn = entropic_oracle(&p, t, &[x - h]).unwrap();
            assert!((v.z[0] - (up.y - dn.y) / (2.0 * h)).abs() < 1e-8);
            assert!((v.hessian[(0, 0)] - (up.z[0] - dn.z[0]) / (2.0 * h)).abs() < 1e-7);
            assert!(v.y.abs() <= 0.8);
        }
    }

    #[test]
    fn forward_gaussian_log() {
        let p = problem(Terminal::ForwardGaussianLog { t0: 0.5 }, vec![0.0]);
        let v = entropic_oracle(&p, 0.0, &[0.3]).unwrap();
        assert!((v.z[0] + 0.3 / 1.5).abs() < 1e-15);
        assert!(p.sup_norm().is_none());
        assert!(entropic_oracle(&p, 1.5, &[0.0]).is_err());
    }

    #[test]
    fn psi_driver_is_consistent() {
        // log driver reproduces the entropic driver
        let log = PsiDriver(LogPsi);
        assert!((log.h(0.4, 2.0) + 1.0).abs() < 1e-15);
        assert!(log.h_y(0.4, 2.0).abs() < 1e-15);
        // ψ = √: the transformed solution is √u with Z = ½√u ∇log u
        let p = problem(Terminal::TorusCosine { a: 0.5 }, vec![0.0]);
        let v = entropic_oracle(&p, 0.3, &[0.4]).unwrap();
        let s = PsiDriver(PowerPsi(0.5)).transform(&v);
        let u = v.y.exp();
        assert!((s.y - u.sqrt()).abs() < 1e-15);
        assert!((s.z[0] - 0.5 * u.sqrt() * v.z[0]).abs() < 1e-15);
    }
}
