//! Closed-form gradient, Li-Yau and Harnack bounds, and the bound-vs-observation
//! checker used throughout the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `K·horizon` the `K → 0` series branch is used.
pub const SERIES_THRESHOLD: f64 = 1e-8;

/// A curvature-type constant `C ∈ [0, ∞]`.
///
/// `C = ∞` is a distinct formula branch rather than a large float, so it is
/// carried as its own variant. Serialized as a number or the token `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurvatureRepr", into = "CurvatureRepr")]
pub enum Curvature {
    Finite(f64),
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CurvatureRepr {
    Number(f64),
    Token(String),
}

impl TryFrom<CurvatureRepr> for Curvature {
    type Error = Error;

    fn try_from(r: CurvatureRepr) -> Result<Self> {
        match r {
            CurvatureRepr::Number(c) => Curvature::finite(c),
            CurvatureRepr::Token(s) => s.parse(),
        }
    }
}

impl From<Curvature> for CurvatureRepr {
    fn from(c: Curvature) -> Self {
        match c {
            Curvature::Finite(v) => CurvatureRepr::Number(v),
            Curvature::Infinite => CurvatureRepr::Token("inf".into()),
        }
    }
}

impl Curvature {
    pub fn finite(c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!("curvature constant must be in [0, inf), got {c}")));
        }
        Ok(Curvature::Finite(c))
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Curvature::Infinite)
    }
}

impl FromStr for Curvature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Curvature::Infinite),
            other => {
                let c: f64 = other
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("cannot parse curvature '{s}'")))?;
                Curvature::finite(c)
            }
        }
    }
}

impl fmt::Display for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Curvature::Finite(c) => write!(f, "{c}"),
            Curvature::Infinite => f.write_str("inf"),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be nonnegative and finite, got {v}")))
    }
}

fn dimension(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    Ok(n as f64)
}

/// `4M/t`: the flat-space gradient bound for `|∇ log u|²`.
pub fn bound_th11(t: f64, m: f64) -> Result<f64> {
    positive("t", t)?;
    nonnegative("M", m)?;
    Ok(4.0 * m / t)
}

/// Upper Li-Yau type bound `C/((t/n)C + 1)`; `C = ∞` gives `n/t`.
pub fn liyau_upper(t: f64, c: Curvature, n: usize) -> Result<f64> {
    nonnegative("t", t)?;
    let nf = dimension(n)?;
    match c {
        Curvature::Infinite => {
            if t == 0.0 {
                return Err(Error::Domain("C = inf requires t > 0".into()));
            }
            Ok(nf / t)
        }
        Curvature::Finite(c) => Ok(c / (t / nf * c + 1.0)),
    }
}

/// Lower Li-Yau type bound `−C/(1 − (t/n)C)`, valid on `0 ≤ t < n/C`.
pub fn liyau_lower(t: f64, c: f64, n: usize) -> Result<f64> {
    nonnegative("t", t)?;
    positive("C", c)?;
    let nf = dimension(n)?;
    let window = nf / c;
    if t >= window {
        return Err(Error::Domain(format!("t = {t} is outside the window [0, n/C) = [0, {window})")));
    }
    Ok(-c / (1.0 - t / nf * c))
}

/// `x/(1 − e^{−x})` with the removable singularity at zero handled by series.
fn x_over_one_minus_exp(x: f64) -> f64 {
    if x < SERIES_THRESHOLD {
        1.0 + 0.5 * x
    } else {
        x / -(-x).exp_m1()
    }
}

/// `4KM/(1 − e^{−K·horizon})`, tending to `4M/horizon` as `K → 0`.
pub fn bound_est_o1(k: f64, horizon: f64, m: f64) -> Result<f64> {
    nonnegative("K", k)?;
    positive("horizon", horizon)?;
    nonnegative("M", m)?;
    Ok(4.0 * m / horizon * x_over_one_minus_exp(k * horizon))
}

/// `4KM²/(1 − e^{−K·horizon})`. The norm enters squared.
pub fn bound_est_o2(k: f64, horizon: f64, m: f64) -> Result<f64> {
    nonnegative("K", k)?;
    positive("horizon", horizon)?;
    nonnegative("M", m)?;
    Ok(4.0 * m * m / horizon * x_over_one_minus_exp(k * horizon))
}

/// `2KM/(1 − e^{−Kt/2})`, tending to `4M/t` as `K → 0`.
pub fn bound_th41(k: f64, t: f64, m: f64) -> Result<f64> {
    nonnegative("K", k)?;
    positive("t", t)?;
    nonnegative("M", m)?;
    Ok(4.0 * m / t * x_over_one_minus_exp(0.5 * k * t))
}

/// Harnack factor bounding `u(t, x)/u(t + s, y)` for points at distance `r`.
pub fn harnack_bound(t: f64, s: f64, r: f64, c: Curvature, n: usize) -> Result<f64> {
    positive("t", t)?;
    positive("s", s)?;
    nonnegative("r", r)?;
    let nf = dimension(n)?;
    let ratio = match c {
        Curvature::Infinite => (t + s) / t,
        Curvature::Finite(c) => {
            positive("C", c)?;
            (1.0 / c + (t + s) / nf) / (1.0 / c + t / nf)
        }
    };
    Ok(ratio.powf(0.5 * nf) * (r * r / (2.0 * s)).exp())
}

/// A bound together with its parameters, as read from flags or config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundSpec {
    Th11 { t: f64, m: f64 },
    LiyauUpper { t: f64, c: Curvature, n: usize },
    LiyauLower { t: f64, c: f64, n: usize },
    EstO1 { k: f64, horizon: f64, m: f64 },
    EstO2 { k: f64, horizon: f64, m: f64 },
    Th41 { k: f64, t: f64, m: f64 },
    Harnack { t: f64, s: f64, r: f64, c: Curvature, n: usize },
}

impl BoundSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BoundSpec::Th11 { .. } => "th11",
            BoundSpec::LiyauUpper { .. } => "liyau_upper",
            BoundSpec::LiyauLower { .. } => "liyau_lower",
            BoundSpec::EstO1 { .. } => "est_o1",
            BoundSpec::EstO2 { .. } => "est_o2",
            BoundSpec::Th41 { .. } => "th41",
            BoundSpec::Harnack { .. } => "harnack",
        }
    }

    /// Compact `key=value` parameter string, stable across runs.
    pub fn params(&self) -> String {
        match self {
            BoundSpec::Th11 { t, m } => format!("t={t};M={m}"),
            BoundSpec::LiyauUpper { t, c, n } => format!("t={t};C={c};n={n}"),
            BoundSpec::LiyauLower { t, c, n } => format!("t={t};C={c};n={n}"),
            BoundSpec::EstO1 { k, horizon, m } | BoundSpec::EstO2 { k, horizon, m } => {
                format!("K={k};horizon={horizon};M={m}")
            }
            BoundSpec::Th41 { k, t, m } => format!("K={k};t={t};M={m}"),
            BoundSpec::Harnack { t, s, r, c, n } => format!("t={t};s={s};r={r};C={c};n={n}"),
        }
    }

    pub fn evaluate(&self) -> Result<f64> {
        match *self {
            BoundSpec::Th11 { t, m } => bound_th11(t, m),
            BoundSpec::LiyauUpper { t, c, n } => liyau_upper(t, c, n),
            BoundSpec::LiyauLower { t, c, n } => liyau_lower(t, c, n),
            BoundSpec::EstO1 { k, horizon, m } => bound_est_o1(k, horizon, m),
            BoundSpec::EstO2 { k, horizon, m } => bound_est_o2(k, horizon, m),
            BoundSpec::Th41 { k, t, m } => bound_th41(k, t, m),
            BoundSpec::Harnack { t, s, r, c, n } => harnack_bound(t, s, r, c, n),
        }
    }

    /// Whether the bound is a floor (observed must lie above it).
    pub fn is_lower(&self) -> bool {
        matches!(self, BoundSpec::LiyauLower { .. })
    }
}

/// How much slack a comparison is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Tolerance {
    /// Closed-form against closed-form: `1e-9`.
    Analytic,
    /// Grid comparisons: `10·h²·scale`.
    Grid { h: f64, scale: f64 },
    /// Monte Carlo: `3·stderr`.
    MonteCarlo { stderr: f64 },
    Absolute { value: f64 },
}

impl Tolerance {
    pub const ANALYTIC: f64 = 1e-9;

    pub fn value(&self) -> f64 {
        match *self {
            Tolerance::Analytic => Self::ANALYTIC,
            Tolerance::Grid { h, scale } => 10.0 * h * h * scale.max(1.0),
            Tolerance::MonteCarlo { stderr } => 3.0 * stderr,
            Tolerance::Absolute { value } => value,
        }
    }
}

/// One bound-vs-observed comparison.
///
/// For upper bounds `margin = bound_value − observed`; for lower bounds the
/// sign is flipped so that a positive margin always means "inside the bound".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub context: String,
    pub bound_value: f64,
    pub observed: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    /// `observed ≤ bound + tolerance`.
    pub fn upper(context: impl Into<String>, bound_value: f64, observed: f64, tolerance: f64) -> Self {
        Self::from_margin(context, bound_value, observed, bound_value - observed, tolerance)
    }

    /// `observed ≥ bound − tolerance`.
    pub fn lower(context: impl Into<String>, bound_value: f64, observed: f64, tolerance: f64) -> Self {
        Self::from_margin(context, bound_value, observed, observed - bound_value, tolerance)
    }

    /// `|observed − target| ≤ tolerance`, reported with `margin = −|observed − target|`.
    pub fn equal(context: impl Into<String>, target: f64, observed: f64, tolerance: f64) -> Self {
        Self::from_margin(context, target, observed, -(observed - target).abs(), tolerance)
    }

    fn from_margin(context: impl Into<String>, bound_value: f64, observed: f64, margin: f64, tolerance: f64) -> Self {
        // NaN margins never pass.
        let passed = margin >= -tolerance;
        Self { context: context.into(), bound_value, observed, margin, tolerance, passed }
    }
}

/// Compare an observed extreme value against a bound.
pub fn check_field_against_bound(observed: f64, bound: &BoundSpec, tolerance: Tolerance) -> Result<CheckResult> {
    let value = bound.evaluate()?;
    let ctx = format!("{}[{}]", bound.kind(), bound.params());
    Ok(if bound.is_lower() {
        CheckResult::lower(ctx, value, observed, tolerance.value())
    } else {
        CheckResult::upper(ctx, value, observed, tolerance.value())
    })
}

/// A scalar transform with three derivatives on `(0, ∞)`.
pub trait Psi: Send + Sync {
    fn name(&self) -> String;
    fn value(&self, u: f64) -> f64;
    fn d1(&self, u: f64) -> f64;
    fn d2(&self, u: f64) -> f64;
    fn d3(&self, u: f64) -> f64;
    fn inverse(&self, y: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct LogPsi;

impl Psi for LogPsi {
    fn name(&self) -> String {
        "log".into()
    }
    fn value(&self, u: f64) -> f64 {
        u.ln()
    }
    fn d1(&self, u: f64) -> f64 {
        1.0 / u
    }
    fn d2(&self, u: f64) -> f64 {
        -1.0 / (u * u)
    }
    fn d3(&self, u: f64) -> f64 {
        2.0 / (u * u * u)
    }
    fn inverse(&self, y: f64) -> f64 {
        y.exp()
    }
}

/// `ψ(u) = u^a` for `a > 0`.
#[derive(Debug, Clone, Copy)]
pub struct PowerPsi(pub f64);

impl Psi for PowerPsi {
    fn name(&self) -> String {
        format!("power({})", self.0)
    }
    fn value(&self, u: f64) -> f64 {
        u.powf(self.0)
    }
    fn d1(&self, u: f64) -> f64 {
        self.0 * u.powf(self.0 - 1.0)
    }
    fn d2(&self, u: f64) -> f64 {
        let a = self.0;
        a * (a - 1.0) * u.powf(a - 2.0)
    }
    fn d3(&self, u: f64) -> f64 {
        let a = self.0;
        a * (a - 1.0) * (a - 2.0) * u.powf(a - 3.0)
    }
    fn inverse(&self, y: f64) -> f64 {
        y.powf(1.0 / self.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearPsi;

impl Psi for LinearPsi {
    fn name(&self) -> String {
        "linear".into()
    }
    fn value(&self, u: f64) -> f64 {
        u
    }
    fn d1(&self, _: f64) -> f64 {
        1.0
    }
    fn d2(&self, _: f64) -> f64 {
        0.0
    }
    fn d3(&self, _: f64) -> f64 {
        0.0
    }
    fn inverse(&self, y: f64) -> f64 {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiViolation {
    NotConcave,
    ThirdDerivative,
}

/// A point where one of the two conditions fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiWitness {
    pub u: f64,
    pub violation: PsiViolation,
    /// `ψ‴ψ′` at `u`.
    pub lhs: f64,
    /// `2ψ″²` at `u`.
    pub rhs: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiReport {
    pub name: String,
    pub admissible: bool,
    /// Worst violating point, if any.
    pub witness: Option<PsiWitness>,
    /// Smallest relative slack `(2ψ″² − ψ‴ψ′)/scale` seen over the test points.
    pub min_relative_slack: f64,
    /// A test point where the third-derivative inequality is tight.
    pub equality_point: Option<f64>,
}

/// Relative tolerance of [`psi_admissible`].
pub const PSI_REL_TOL: f64 = 1e-10;

/// Check `ψ″ ≤ 0` and `ψ‴ψ′ ≤ 2ψ″²` at each test point.
pub fn psi_admissible(psi: &dyn Psi, points: &[f64]) -> Result<PsiReport> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("no test points".into()));
    }
    let mut witness: Option<(f64, PsiWitness)> = None;
    let mut min_slack = f64::INFINITY;
    let mut equality_point = None;
    for &u in points {
        positive("test point", u)?;
        let (d1, d2, d3) = (psi.d1(u), psi.d2(u), psi.d3(u));
        if ![d1, d2, d3].iter().all(|v| v.is_finite()) {
            return Err(Error::Derivative(format!("{} has non-finite derivatives at {u}", psi.name())));
        }
        let (lhs, rhs) = (d3 * d1, 2.0 * d2 * d2);
        let scale = lhs.abs().max(rhs).max(f64::MIN_POSITIVE);
        let slack = if lhs == 0.0 && rhs == 0.0 { 0.0 } else { (rhs - lhs) / scale };
        min_slack = min_slack.min(slack);
        if slack.abs() <= PSI_REL_TOL && equality_point.is_none() {
            equality_point = Some(u);
        }
        let concave_scale = (d1 / u).abs().max(f64::MIN_POSITIVE);
        let concavity_excess = d2 / concave_scale;
        let candidate = if concavity_excess > PSI_REL_TOL {
            Some((concavity_excess, PsiViolation::NotConcave))
        } else if slack < -PSI_REL_TOL {
            Some((-slack, PsiViolation::ThirdDerivative))
        } else {
            None
        };
        if let Some((severity, violation)) = candidate {
            if witness.as_ref().is_none_or(|(s, _)| severity > *s) {
                witness = Some((severity, PsiWitness { u, violation, lhs, rhs, d2 }));
            }
        }
    }
    Ok(PsiReport {
        name: psi.name(),
        admissible: witness.is_none(),
        witness: witness.map(|(_, w)| w),
        min_relative_slack: min_slack,
        equality_point,
    })
}
