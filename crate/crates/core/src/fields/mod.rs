//! Vector-field calculus on `Rⁿ`.
//!
//! A family `A₀, A₁, …, A_m` is described by [`VectorFieldSpec`]. Index `0`
//! is the drift field, `1..=m` are the diffusion fields. Jacobians use the
//! row-per-component convention `J[(j, i)] = ∂A^j/∂x^i`, and the Hessian of
//! component `j` is `H[j][(i, k)] = ∂²A^j/∂x^i∂x^k`.
//!
//! The bracket convention is `[A_β, A_α]^j = A_β^i ∂_i A_α^j − A_α^i ∂_i A_β^j`.

mod conditions;
mod config;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use conditions::{
    c1_at, c2_at, condition_report, estimate_c1, estimate_c2, frobenius_check, min_generalized_ratio,
    sample_points, ConditionReport, ConstantEstimate, FormOutcome, FrobeniusPoint, FrobeniusReport,
    SampleDomain, UnboundedWitness,
};
pub use config::{FieldConfig, LinearField, PluginRegistry};

/// A family of smooth vector fields `A₀, …, A_m` on `Rⁿ`.
///
/// Condition-of-bounded-derivatives is the caller's responsibility;
/// [`VectorFieldSpec::declared_derivative_bound`] is informational only.
pub trait VectorFieldSpec: Send + Sync {
    /// Ambient dimension `n`.
    fn dim(&self) -> usize;
    /// Number of diffusion fields `m`.
    fn n_fields(&self) -> usize;
    /// `A_α(x)` for `α ∈ 0..=m`.
    fn value(&self, alpha: usize, x: &[f64]) -> Result<DVector<f64>>;
    /// First partials, `J[(j, i)] = ∂A_α^j/∂x^i`.
    fn jacobian(&self, alpha: usize, x: &[f64]) -> Result<DMatrix<f64>>;
    /// Second partials, one symmetric `n×n` matrix per component.
    fn hessians(&self, alpha: usize, x: &[f64]) -> Result<Vec<DMatrix<f64>>>;

    fn declared_derivative_bound(&self) -> Option<f64> {
        None
    }
}

pub(crate) fn check_index(spec: &dyn VectorFieldSpec, alpha: usize, min: usize) -> Result<()> {
    let max = spec.n_fields();
    if alpha < min || alpha > max {
        return Err(Error::IndexOutOfRange { index: alpha, min, max });
    }
    Ok(())
}

pub(crate) fn check_point(spec: &dyn VectorFieldSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: x.len() });
    }
    Ok(())
}

/// Fields whose components are polynomials of degree at most two:
/// `A_α^j(x) = c^j + Σᵢ M_{ji} xᵢ + ½ xᵀ Q_j x`.
///
/// Constant, linear/affine and Heisenberg families are special cases.
#[derive(Debug, Clone)]
pub struct PolynomialFields {
    n: usize,
    offsets: Vec<DVector<f64>>,
    linear: Vec<DMatrix<f64>>,
    quadratic: Vec<Vec<DMatrix<f64>>>,
    bound: Option<f64>,
}

impl PolynomialFields {
    /// Zero drift and `m` zero diffusion fields.
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            offsets: vec![DVector::zeros(n); m + 1],
            linear: vec![DMatrix::zeros(n, n); m + 1],
            quadratic: vec![vec![DMatrix::zeros(n, n); n]; m + 1],
            bound: None,
        }
    }

    /// Constant fields; `fields[α-1]` is `A_α`.
    pub fn constant(drift: &[f64], fields: &[Vec<f64>]) -> Result<Self> {
        let n = drift.len();
        let mut out = Self::zeros(n, fields.len());
        out.offsets[0] = DVector::from_column_slice(drift);
        for (a, f) in fields.iter().enumerate() {
            if f.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: f.len() });
            }
            out.offsets[a + 1] = DVector::from_column_slice(f);
        }
        Ok(out)
    }

    /// Affine fields `A_α(x) = M_α x + c_α`; index 0 of the slices is the drift.
    pub fn affine(matrices: Vec<DMatrix<f64>>, offsets: Vec<DVector<f64>>) -> Result<Self> {
        if matrices.is_empty() || matrices.len() != offsets.len() {
            return Err(Error::InvalidParameter(
                "affine family needs one (matrix, offset) pair per field, drift included".into(),
            ));
        }
        let n = offsets[0].len();
        for (mat, off) in matrices.iter().zip(&offsets) {
            if mat.nrows() != n || mat.ncols() != n || off.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: off.len() });
            }
        }
        let m = matrices.len() - 1;
        let mut out = Self::zeros(n, m);
        out.linear = matrices;
        out.offsets = offsets;
        Ok(out)
    }

    /// Heisenberg frame on `R³`: `A₁ = ∂x`, `A₂ = ∂y + x∂z`, `A₀ = 0`.
    pub fn heisenberg() -> Self {
        let mut out = Self::zeros(3, 2);
        out.offsets[1] = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        out.offsets[2] = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
        out.linear[2][(2, 0)] = 1.0;
        out
    }

    /// Identity frame `A_α = e_α` (`m = n`) with linear drift `A₀(x) = B x`.
    pub fn identity_frame(drift: DMatrix<f64>) -> Result<Self> {
        let n = drift.nrows();
        if drift.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: drift.ncols() });
        }
        let mut out = Self::zeros(n, n);
        out.linear[0] = drift;
        for a in 0..n {
            out.offsets[a + 1][a] = 1.0;
        }
        Ok(out)
    }

    /// Sets the Hessian `Q_j` of component `j` of field `alpha`.
    pub fn with_quadratic(mut self, alpha: usize, component: usize, q: DMatrix<f64>) -> Self {
        let sym = (&q + q.transpose()) * 0.5;
        self.quadratic[alpha][component] = sym;
        self
    }

    pub fn with_declared_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }
}

impl VectorFieldSpec for PolynomialFields {
    fn dim(&self) -> usize {
        self.n
    }

    fn n_fields(&self) -> usize {
        self.offsets.len() - 1
    }

    fn value(&self, alpha: usize, x: &[f64]) -> Result<DVector<f64>> {
        check_index(self, alpha, 0)?;
        check_point(self, x)?;
        let xv = DVector::from_column_slice(x);
        let mut v = &self.offsets[alpha] + &self.linear[alpha] * &xv;
        for (j, q) in self.quadratic[alpha].iter().enumerate() {
            v[j] += 0.5 * xv.dot(&(q * &xv));
        }
        Ok(v)
    }

    fn jacobian(&self, alpha: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        check_index(self, alpha, 0)?;
        check_point(self, x)?;
        let xv = DVector::from_column_slice(x);
        let mut jac = self.linear[alpha].clone();
        for (j, q) in self.quadratic[alpha].iter().enumerate() {
            let row = q * &xv;
            for i in 0..self.n {
                jac[(j, i)] += row[i];
            }
        }
        Ok(jac)
    }

    fn hessians(&self, alpha: usize, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        check_index(self, alpha, 0)?;
        check_point(self, x)?;
        Ok(self.quadratic[alpha].clone())
    }

    fn declared_derivative_bound(&self) -> Option<f64> {
        self.bound
    }
}

type ValueFn = dyn Fn(usize, &[f64]) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(usize, &[f64]) -> Option<DMatrix<f64>> + Send + Sync;
type HessianFn = dyn Fn(usize, &[f64]) -> Option<Vec<DMatrix<f64>>> + Send + Sync;

/// Fields supplied as analytic callbacks (the plugin path).
///
/// A derivative callback returning `None` is reported as
/// [`Error::Derivative`].
pub struct CallbackFields {
    n: usize,
    m: usize,
    value: Arc<ValueFn>,
    jacobian: Arc<JacobianFn>,
    hessians: Arc<HessianFn>,
}

impl CallbackFields {
    pub fn new(
        n: usize,
        m: usize,
        value: impl Fn(usize, &[f64]) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(usize, &[f64]) -> Option<DMatrix<f64>> + Send + Sync + 'static,
        hessians: impl Fn(usize, &[f64]) -> Option<Vec<DMatrix<f64>>> + Send + Sync + 'static,
    ) -> Self {
        Self { n, m, value: Arc::new(value), jacobian: Arc::new(jacobian), hessians: Arc::new(hessians) }
    }
}

impl VectorFieldSpec for CallbackFields {
    fn dim(&self) -> usize {
        self.n
    }
    fn n_fields(&self) -> usize {
        self.m
    }
    fn value(&self, alpha: usize, x: &[f64]) -> Result<DVector<f64>> {
        check_index(self, alpha, 0)?;
        check_point(self, x)?;
        Ok((self.value)(alpha, x))
    }
    fn jacobian(&self, alpha: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        check_index(self, alpha, 0)?;
        check_point(self, x)?;
        (self.jacobian)(alpha, x)
            .ok_or_else(|| Error::Derivative(format!("jacobian callback failed for field {alpha}")))
    }
    fn hessians(&self, alpha: usize, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        check_index(self, alpha, 0)?;
        check_point(self, x)?;
        (self.hessians)(alpha, x).ok_or_else(|| Error::Derivative(format!("second-derivative data missing for field {alpha}")))
    }
}

/// Wraps a value-only family and supplies derivatives by central differences.
///
/// First partials use step `h1` (default `1e-5 × scale`); second partials
/// use the coarser `h2` (default `1e-4 × scale`) so the `O(ε/h²)` rounding
/// of the second difference stays near `1e-8`. Both stencils are exact on
/// quadratic fields up to rounding.
pub struct FiniteDifferenceFields<S> {
    inner: S,
    h1: f64,
    h2: f64,
}

impl<S: VectorFieldSpec> FiniteDifferenceFields<S> {
    pub fn new(inner: S, length_scale: f64) -> Self {
        Self { inner, h1: 1e-5 * length_scale, h2: 1e-4 * length_scale }
    }

    pub fn with_steps(inner: S, h1: f64, h2: f64) -> Self {
        Self { inner, h1, h2 }
    }

    fn shifted(&self, alpha: usize, x: &[f64], shifts: &[(usize, f64)]) -> Result<DVector<f64>> {
        let mut y = x.to_vec();
        for &(i, d) in shifts {
            y[i] += d;
        }
        self.inner.value(alpha, &y)
    }
}

impl<S: VectorFieldSpec> VectorFieldSpec for FiniteDifferenceFields<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn n_fields(&self) -> usize {
        self.inner.n_fields()
    }
    fn value(&self, alpha: usize, x: &[f64]) -> Result<DVector<f64>> {
        self.inner.value(alpha, x)
    }

    fn jacobian(&self, alpha: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        check_index(self, alpha, 0)?;
        check_point(self, x)?;
        let n = self.dim();
        let h = self.h1;
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            let d = (self.shifted(alpha, x, &[(i, h)])? - self.shifted(alpha, x, &[(i, -h)])?) / (2.0 * h);
            jac.set_column(i, &d);
        }
        Ok(jac)
    }

    fn hessians(&self, alpha: usize, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        check_index(self, alpha, 0)?;
        check_point(self, x)?;
        let n = self.dim();
        let h = self.h2;
        let centre = self.inner.value(alpha, x)?;
        let mut out = vec![DMatrix::zeros(n, n); n];
        for i in 0..n {
            let d2 = (self.shifted(alpha, x, &[(i, h)])? - &centre * 2.0 + self.shifted(alpha, x, &[(i, -h)])?) / (h * h);
            for j in 0..n {
                out[j][(i, i)] = d2[j];
            }
            for k in (i + 1)..n {
                let pp = self.shifted(alpha, x, &[(i, h), (k, h)])?;
                let pm = self.shifted(alpha, x, &[(i, h), (k, -h)])?;
                let mp = self.shifted(alpha, x, &[(i, -h), (k, h)])?;
                let mm = self.shifted(alpha, x, &[(i, -h), (k, -h)])?;
                let d = (pp - pm - mp + mm) / (4.0 * h * h);
                for j in 0..n {
                    out[j][(i, k)] = d[j];
                    out[j][(k, i)] = d[j];
                }
            }
        }
        Ok(out)
    }

    fn declared_derivative_bound(&self) -> Option<f64> {
        self.inner.declared_derivative_bound()
    }
}

/// Value-only view of a family; used to feed [`FiniteDifferenceFields`].
pub struct ValueOnly<S>(pub S);

impl<S: VectorFieldSpec> VectorFieldSpec for ValueOnly<S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn n_fields(&self) -> usize {
        self.0.n_fields()
    }
    fn value(&self, alpha: usize, x: &[f64]) -> Result<DVector<f64>> {
        self.0.value(alpha, x)
    }
    fn jacobian(&self, _alpha: usize, _x: &[f64]) -> Result<DMatrix<f64>> {
        Err(Error::Derivative("value-only family has no analytic jacobian".into()))
    }
    fn hessians(&self, _alpha: usize, _x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        Err(Error::Derivative("value-only family has no analytic second derivatives".into()))
    }
}

impl<T: VectorFieldSpec + ?Sized> VectorFieldSpec for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn n_fields(&self) -> usize {
        (**self).n_fields()
    }
    fn value(&self, alpha: usize, x: &[f64]) -> Result<DVector<f64>> {
        (**self).value(alpha, x)
    }
    fn jacobian(&self, alpha: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        (**self).jacobian(alpha, x)
    }
    fn hessians(&self, alpha: usize, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        (**self).hessians(alpha, x)
    }
    fn declared_derivative_bound(&self) -> Option<f64> {
        (**self).declared_derivative_bound()
    }
}

/// Coefficients of `[A_β, A_α]` at `x`.
pub fn lie_bracket(spec: &dyn VectorFieldSpec, beta: usize, alpha: usize, x: &[f64]) -> Result<DVector<f64>> {
    check_index(spec, beta, 0)?;
    check_index(spec, alpha, 0)?;
    let a_beta = spec.value(beta, x)?;
    let a_alpha = spec.value(alpha, x)?;
    let j_beta = spec.jacobian(beta, x)?;
    let j_alpha = spec.jacobian(alpha, x)?;
    Ok(j_alpha * a_beta - j_beta * a_alpha)
}

/// Jacobian of the bracket field `x ↦ [A_β, A_α](x)`; needs second partials.
pub fn bracket_jacobian(spec: &dyn VectorFieldSpec, beta: usize, alpha: usize, x: &[f64]) -> Result<DMatrix<f64>> {
    check_index(spec, beta, 0)?;
    check_index(spec, alpha, 0)?;
    let n = spec.dim();
    let a_beta = spec.value(beta, x)?;
    let a_alpha = spec.value(alpha, x)?;
    let j_beta = spec.jacobian(beta, x)?;
    let j_alpha = spec.jacobian(alpha, x)?;
    let h_beta = spec.hessians(beta, x)?;
    let h_alpha = spec.hessians(alpha, x)?;
    let mut out = &j_alpha * &j_beta - &j_beta * &j_alpha;
    for j in 0..n {
        let row = &h_alpha[j] * &a_beta - &h_beta[j] * &a_alpha;
        for k in 0..n {
            out[(j, k)] += row[k];
        }
    }
    Ok(out)
}

/// `[A_β, [A_β, A_α]]` evaluated by the closed five-term formula.
pub fn triple_bracket(spec: &dyn VectorFieldSpec, beta: usize, alpha: usize, x: &[f64]) -> Result<DVector<f64>> {
    check_index(spec, beta, 1)?;
    check_index(spec, alpha, 1)?;
    let n = spec.dim();
    let a_beta = spec.value(beta, x)?;
    let a_alpha = spec.value(alpha, x)?;
    let j_beta = spec.jacobian(beta, x)?;
    let j_alpha = spec.jacobian(alpha, x)?;
    let h_beta = spec.hessians(beta, x)?;
    let h_alpha = spec.hessians(alpha, x)?;

    let jb_ab = &j_beta * &a_beta;
    let ja_ab = &j_alpha * &a_beta;
    let jb_aa = &j_beta * &a_alpha;
    let mut out = &j_alpha * &jb_ab - (&j_beta * &ja_ab) * 2.0 + &j_beta * &jb_aa;
    for k in 0..n {
        out[k] += a_beta.dot(&(&h_alpha[k] * &a_beta)) - a_alpha.dot(&(&h_beta[k] * &a_beta));
    }
    Ok(out)
}

/// `[A_β, [A_β, A_α]]` by applying the bracket twice. Oracle for
/// [`triple_bracket`].
pub fn nested_triple_bracket(spec: &dyn VectorFieldSpec, beta: usize, alpha: usize, x: &[f64]) -> Result<DVector<f64>> {
    let inner = lie_bracket(spec, beta, alpha, x)?;
    let inner_jac = bracket_jacobian(spec, beta, alpha, x)?;
    let a_beta = spec.value(beta, x)?;
    let j_beta = spec.jacobian(beta, x)?;
    Ok(inner_jac * a_beta - j_beta * inner)
}

/// Curvature proxy `R_α = Σ_β [A_β, [A_β, A_α]]`, `β = 1..=m`.
pub fn ricci_proxy(spec: &dyn VectorFieldSpec, alpha: usize, x: &[f64]) -> Result<DVector<f64>> {
    check_index(spec, alpha, 1)?;
    let mut acc = DVector::zeros(spec.dim());
    for beta in 1..=spec.n_fields() {
        acc += triple_bracket(spec, beta, alpha, x)?;
    }
    Ok(acc)
}

/// All pairwise brackets and curvature proxies at one point.
#[derive(Debug, Clone)]
pub struct BracketTable {
    m: usize,
    pairs: Vec<DVector<f64>>,
    triples: Vec<DVector<f64>>,
    ricci: Vec<DVector<f64>>,
}

impl BracketTable {
    pub fn at(spec: &dyn VectorFieldSpec, x: &[f64]) -> Result<Self> {
        let m = spec.n_fields();
        let mut pairs = Vec::with_capacity((m + 1) * (m + 1));
        for beta in 0..=m {
            for alpha in 0..=m {
                pairs.push(lie_bracket(spec, beta, alpha, x)?);
            }
        }
        let mut triples = Vec::with_capacity(m * m);
        for beta in 1..=m {
            for alpha in 1..=m {
                triples.push(triple_bracket(spec, beta, alpha, x)?);
            }
        }
        let n = spec.dim();
        let ricci = (1..=m)
            .map(|alpha| (1..=m).fold(DVector::zeros(n), |acc, beta| acc + &triples[(beta - 1) * m + alpha - 1]))
            .collect();
        Ok(Self { m, pairs, triples, ricci })
    }

    /// `A_{β,α}`, indices in `0..=m`.
    pub fn pair(&self, beta: usize, alpha: usize) -> &DVector<f64> {
        &self.pairs[beta * (self.m + 1) + alpha]
    }

    /// `A_{β,β,α}`, indices in `1..=m`.
    pub fn triple(&self, beta: usize, alpha: usize) -> &DVector<f64> {
        &self.triples[(beta - 1) * self.m + alpha - 1]
    }

    /// `R_α`, index in `1..=m`.
    pub fn ricci(&self, alpha: usize) -> &DVector<f64> {
        &self.ricci[alpha - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commuting_constants() -> PolynomialFields {
        PolynomialFields::constant(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    /// A quadratic family with nonzero second derivatives in every field.
    pub(crate) fn quadratic_family() -> PolynomialFields {
        let lin = |a: [[f64; 2]; 2]| DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]);
        let base = PolynomialFields::affine(
            vec![lin([[0.1, -0.3], [0.2, 0.0]]), lin([[0.0, 0.5], [-0.2, 0.3]]), lin([[0.4, 0.0], [0.1, -0.6]])],
            vec![
                DVector::from_column_slice(&[0.2, 0.0]),
                DVector::from_column_slice(&[1.0, 0.3]),
                DVector::from_column_slice(&[-0.2, 1.0]),
            ],
        )
        .unwrap();
        base.with_quadratic(1, 0, lin([[0.7, 0.1], [0.1, -0.4]]))
            .with_quadratic(1, 1, lin([[0.0, 0.3], [0.3, 0.2]]))
            .with_quadratic(2, 0, lin([[-0.5, 0.2], [0.2, 0.9]]))
            .with_quadratic(2, 1, lin([[0.6, -0.1], [-0.1, 0.0]]))
            .with_quadratic(0, 1, lin([[0.3, 0.0], [0.0, 0.3]]))
    }

    #[test]
    fn constant_fields_commute() {
        let s = commuting_constants();
        assert_eq!(lie_bracket(&s, 1, 2, &[0.3, -1.0]).unwrap(), DVector::zeros(2));
        assert_eq!(triple_bracket(&s, 1, 2, &[0.3, -1.0]).unwrap(), DVector::zeros(2));
        assert_eq!(ricci_proxy(&s, 1, &[0.3, -1.0]).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn heisenberg_bracket_is_dz() {
        let s = PolynomialFields::heisenberg();
        for x in [[0.0, 0.0, 0.0], [1.3, -0.2, 4.0]] {
            let b = lie_bracket(&s, 1, 2, &x).unwrap();
            assert_eq!(b, DVector::from_column_slice(&[0.0, 0.0, 1.0]));
            assert_eq!(triple_bracket(&s, 1, 2, &x).unwrap(), DVector::zeros(3));
            assert_eq!(ricci_proxy(&s, 1, &x).unwrap(), DVector::zeros(3));
            assert_eq!(ricci_proxy(&s, 2, &x).unwrap(), DVector::zeros(3));
        }
    }

    #[test]
    fn self_bracket_is_exactly_zero() {
        let s = quadratic_family();
        for a in 0..=2 {
            assert_eq!(lie_bracket(&s, a, a, &[0.4, -0.7]).unwrap(), DVector::zeros(2));
        }
    }

    #[test]
    fn single_field_ricci_vanishes() {
        let s = PolynomialFields::affine(
            vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::zeros(1), DVector::from_element(1, 0.5)],
        )
        .unwrap()
        .with_quadratic(1, 0, DMatrix::from_element(1, 1, 0.8));
        assert!(ricci_proxy(&s, 1, &[0.9]).unwrap().norm() < 1e-14);
    }

    #[test]
    fn closed_triple_formula_matches_nested_on_linear_fields() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let shear = DMatrix::from_row_slice(2, 2, &[0.5, 2.0, 0.0, -0.5]);
        let s = PolynomialFields::affine(
            vec![DMatrix::zeros(2, 2), rot, shear],
            vec![DVector::zeros(2), DVector::from_column_slice(&[0.1, 0.0]), DVector::zeros(2)],
        )
        .unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0], [-0.3, 0.7]] {
            for b in 1..=2 {
                for a in 1..=2 {
                    let closed = triple_bracket(&s, b, a, &x).unwrap();
                    let nested = nested_triple_bracket(&s, b, a, &x).unwrap();
                    assert!((closed - nested).amax() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn closed_triple_formula_matches_nested_on_quadratic_fields() {
        let s = quadratic_family();
        for x in [[0.0, 0.0], [0.5, -1.5], [2.0, 1.0]] {
            for b in 1..=2 {
                for a in 1..=2 {
                    let closed = triple_bracket(&s, b, a, &x).unwrap();
                    let nested = nested_triple_bracket(&s, b, a, &x).unwrap();
                    assert!((&closed - &nested).amax() < 1e-10, "{closed} vs {nested}");
                }
            }
        }
    }

    #[test]
    fn index_errors() {
        let s = commuting_constants();
        assert!(matches!(lie_bracket(&s, 3, 0, &[0.0, 0.0]), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(triple_bracket(&s, 0, 1, &[0.0, 0.0]), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(ricci_proxy(&s, 0, &[0.0, 0.0]), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(s.value(1, &[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn missing_second_derivatives_reported() {
        let s = ValueOnly(quadratic_family());
        assert!(matches!(triple_bracket(&s, 1, 2, &[0.0, 0.0]), Err(Error::Derivative(_))));
    }

    #[test]
    fn finite_differences_exact_on_quadratic_fields() {
        let analytic = quadratic_family();
        let fd = FiniteDifferenceFields::new(ValueOnly(quadratic_family()), 1.0);
        let x = [0.3, -0.8];
        for a in 0..=2 {
            let ja = analytic.jacobian(a, &x).unwrap();
            let jf = fd.jacobian(a, &x).unwrap();
            assert!((ja - jf).amax() < 1e-9);
            let ha = analytic.hessians(a, &x).unwrap();
            let hf = fd.hessians(a, &x).unwrap();
            for (p, q) in ha.iter().zip(&hf) {
                assert!((p - q).amax() < 1e-6);
            }
        }
        let t_an = triple_bracket(&analytic, 1, 2, &x).unwrap();
        let t_fd = triple_bracket(&fd, 1, 2, &x).unwrap();
        assert!((t_an - t_fd).amax() < 1e-5);
    }

    #[test]
    fn bracket_table_is_consistent() {
        let s = quadratic_family();
        let x = [0.1, 0.2];
        let t = BracketTable::at(&s, &x).unwrap();
        assert_eq!(t.pair(1, 2), &lie_bracket(&s, 1, 2, &x).unwrap());
        assert_eq!(t.pair(0, 2), &lie_bracket(&s, 0, 2, &x).unwrap());
        assert!((t.ricci(1) - ricci_proxy(&s, 1, &x).unwrap()).amax() < 1e-15);
        assert_eq!(t.triple(2, 1), &triple_bracket(&s, 2, 1, &x).unwrap());
    }
}
