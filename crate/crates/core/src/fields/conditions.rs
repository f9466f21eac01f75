use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lie_bracket, ricci_proxy, VectorFieldSpec};
use crate::error::{Error, Result};
use crate::rng;

const REL_TOL: f64 = 1e-9;

/// Axis-aligned sampling box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SampleDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParameter("sample box needs matching nonempty bounds".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter("sample box is empty".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self { lower: vec![-half_width; dim], upper: vec![half_width; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn map_unit(&self, u: &[f64]) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).zip(u).map(|((l, h), t)| l + (h - l) * t).collect()
    }
}

/// Sample points: even indices are uniform draws, odd indices walk the
/// Halton sequence. Point `i` depends only on `(seed, i)`, so the first
/// `k` points of a larger sample equal a `k`-point sample.
pub fn sample_points(domain: &SampleDomain, n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let seed = rng::mix_seed(seed, 0xC0DE);
    (0..n_samples)
        .map(|i| {
            let unit: Vec<f64> = if i % 2 == 0 {
                let mut r = rng::stream(seed, i as u64);
                (0..d).map(|_| r.random::<f64>()).collect()
            } else {
                rng::halton((i / 2) as u64, d)
            };
            domain.map_unit(&unit)
        })
        .collect()
}

/// Outcome of minimising `vᵀPv / vᵀDv` over `{v : vᵀDv > 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FormOutcome {
    /// Finite infimum of the ratio.
    Finite(f64),
    /// The numerator can be driven negative (or to −∞) where the
    /// denominator vanishes; no finite constant exists here.
    Unbounded { lhs_min: f64 },
    /// The denominator vanishes identically.
    DenominatorZero { lhs_min: f64 },
}

/// Infimum of the generalised Rayleigh quotient `vᵀPv / vᵀDv` for symmetric
/// `P` and positive semidefinite `D`.
///
/// Splits the space into `range(D) ⊕ null(D)`, minimises the numerator
/// over the null component in closed form (Schur complement through the
/// pseudo-inverse of `P` restricted to `null(D)`), and solves the remaining
/// definite eigenproblem on `range(D)`.
pub fn min_generalized_ratio(p: &DMatrix<f64>, d: &DMatrix<f64>) -> FormOutcome {
    let dim = p.nrows();
    let p_eig = SymmetricEigen::new(p.clone());
    let lhs_min = p_eig.eigenvalues.min();
    let p_scale = p.amax().max(f64::MIN_POSITIVE);

    let d_eig = SymmetricEigen::new(d.clone());
    let d_scale = d_eig.eigenvalues.amax();
    if d_scale <= f64::MIN_POSITIVE {
        return FormOutcome::DenominatorZero { lhs_min };
    }
    let (range, null): (Vec<usize>, Vec<usize>) =
        (0..dim).partition(|&i| d_eig.eigenvalues[i] > REL_TOL * d_scale);

    let basis = |idx: &[usize]| {
        let mut b = DMatrix::zeros(dim, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            b.set_column(c, &d_eig.eigenvectors.column(i));
        }
        b
    };
    let vr = basis(&range);
    let mut schur = vr.transpose() * p * &vr;

    if !null.is_empty() {
        let vn = basis(&null);
        let p_nn = vn.transpose() * p * &vn;
        let p_rn = vr.transpose() * p * &vn;
        let nn_eig = SymmetricEigen::new(p_nn);
        if nn_eig.eigenvalues.min() < -REL_TOL * p_scale {
            return FormOutcome::Unbounded { lhs_min };
        }
        let mut pinv = DMatrix::zeros(null.len(), null.len());
        for (k, &e) in nn_eig.eigenvalues.iter().enumerate() {
            let w = nn_eig.eigenvectors.column(k);
            if e > REL_TOL * p_scale {
                pinv += (&w * w.transpose()) / e;
            } else if (&p_rn * &w).amax() > 1e-7 * p_scale {
                // linear coupling into a flat direction of the numerator
                return FormOutcome::Unbounded { lhs_min };
            }
        }
        schur -= &p_rn * pinv * p_rn.transpose();
    }

    let inv_sqrt = DVector::from_iterator(range.len(), range.iter().map(|&i| d_eig.eigenvalues[i].sqrt().recip()));
    let scaled = DMatrix::from_fn(range.len(), range.len(), |i, j| schur[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let scaled = (&scaled + scaled.transpose()) * 0.5;
    FormOutcome::Finite(SymmetricEigen::new(scaled).eigenvalues.min())
}

fn add_block(target: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>) {
    let mut view = target.view_mut((row, col), (block.nrows(), block.ncols()));
    view += block;
}

fn frame_gram(spec: &dyn VectorFieldSpec, fields: &[DVector<f64>]) -> DMatrix<f64> {
    let n = spec.dim();
    fields.iter().fold(DMatrix::zeros(n, n), |acc, a| acc + a * a.transpose())
}

fn diffusion_fields(spec: &dyn VectorFieldSpec, x: &[f64]) -> Result<Vec<DVector<f64>>> {
    (1..=spec.n_fields()).map(|a| spec.value(a, x)).collect()
}

/// Numerator/denominator matrices of the first structure condition in
/// the variables `(ξ, θ₁, …, θ_m)`.
pub(crate) fn c1_matrices(spec: &dyn VectorFieldSpec, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = spec.dim();
    let m = spec.n_fields();
    let dim = n * (m + 1);
    let fields = diffusion_fields(spec, x)?;
    let gram = frame_gram(spec, &fields);

    let mut p = DMatrix::zeros(dim, dim);
    for beta in 1..=m {
        let off = n * beta;
        add_block(&mut p, off, off, &gram);
        for alpha in 1..=m {
            let br = lie_bracket(spec, beta, alpha, x)?;
            let a = &fields[alpha - 1];
            // 2⟨A_α,ξ⟩⟨A_{β,α},θ_β⟩ + 2⟨A_α,θ_β⟩⟨A_{β,α},ξ⟩ = 2 ξᵀ X θ_β
            let cross = a * br.transpose() + &br * a.transpose();
            add_block(&mut p, 0, off, &cross);
            add_block(&mut p, off, 0, &cross.transpose());
        }
    }
    let mut d = DMatrix::zeros(dim, dim);
    d.view_mut((0, 0), (n, n)).copy_from(&gram);
    Ok((p, d))
}

/// Numerator/denominator matrices of the second structure condition in `ξ`.
pub(crate) fn c2_matrices(spec: &dyn VectorFieldSpec, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = spec.dim();
    let m = spec.n_fields();
    let fields = diffusion_fields(spec, x)?;
    let mut q = DMatrix::zeros(n, n);
    for alpha in 1..=m {
        let r = ricci_proxy(spec, alpha, x)?;
        let drift_br = lie_bracket(spec, 0, alpha, x)?;
        q += &fields[alpha - 1] * (r + drift_br * 2.0).transpose();
        for beta in 1..=m {
            let br = lie_bracket(spec, beta, alpha, x)?;
            q += &br * br.transpose();
        }
    }
    let p = (&q + q.transpose()) * 0.5;
    Ok((p, frame_gram(spec, &fields)))
}

/// Pointwise outcome for the first structure condition.
pub fn c1_at(spec: &dyn VectorFieldSpec, x: &[f64]) -> Result<FormOutcome> {
    let (p, d) = c1_matrices(spec, x)?;
    Ok(min_generalized_ratio(&p, &d))
}

/// Pointwise outcome for the second structure condition.
pub fn c2_at(spec: &dyn VectorFieldSpec, x: &[f64]) -> Result<FormOutcome> {
    let (p, d) = c2_matrices(spec, x)?;
    Ok(min_generalized_ratio(&p, &d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnboundedWitness {
    pub point: Vec<f64>,
    pub lhs_min: f64,
}

/// Estimated smallest constant over a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    /// `max(0, −min ratio)` over points with a finite ratio.
    pub value: f64,
    pub worst_point: Option<Vec<f64>>,
    pub sample_count: usize,
    /// Points where the denominator vanished identically.
    pub degenerate_samples: usize,
    /// First point where no finite constant exists, if any.
    pub failure: Option<UnboundedWitness>,
}

impl ConstantEstimate {
    /// Whether a finite constant was found at every sample.
    pub fn holds(&self) -> bool {
        self.failure.is_none()
    }
}

fn reduce_outcomes(points: &[Vec<f64>], outcomes: Vec<FormOutcome>) -> Result<ConstantEstimate> {
    let mut est = ConstantEstimate {
        value: 0.0,
        worst_point: None,
        sample_count: points.len(),
        degenerate_samples: 0,
        failure: None,
    };
    let mut min_lhs = f64::INFINITY;
    for (x, out) in points.iter().zip(outcomes) {
        match out {
            FormOutcome::Finite(ratio) => {
                let c = (-ratio).max(0.0);
                if c > est.value || est.worst_point.is_none() {
                    est.value = est.value.max(c);
                    est.worst_point = Some(x.clone());
                }
            }
            FormOutcome::Unbounded { lhs_min } => {
                if est.failure.is_none() {
                    est.failure = Some(UnboundedWitness { point: x.clone(), lhs_min });
                }
            }
            FormOutcome::DenominatorZero { lhs_min } => {
                est.degenerate_samples += 1;
                min_lhs = min_lhs.min(lhs_min);
                if lhs_min < -REL_TOL && est.failure.is_none() {
                    est.failure = Some(UnboundedWitness { point: x.clone(), lhs_min });
                }
            }
        }
    }
    if est.sample_count > 0 && est.degenerate_samples == est.sample_count {
        return Err(Error::DenominatorDegenerate { lhs_min: min_lhs });
    }
    Ok(est)
}

fn estimate_with(
    spec: &dyn VectorFieldSpec,
    domain: &SampleDomain,
    n_samples: usize,
    seed: u64,
    at: fn(&dyn VectorFieldSpec, &[f64]) -> Result<FormOutcome>,
) -> Result<ConstantEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    if domain.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: domain.dim() });
    }
    let points = sample_points(domain, n_samples, seed);
    let outcomes: Vec<FormOutcome> = points.par_iter().map(|x| at(spec, x)).collect::<Result<_>>()?;
    reduce_outcomes(&points, outcomes)
}

/// Estimate of the smallest `C₁ ≥ 0` for the first structure condition.
pub fn estimate_c1(spec: &dyn VectorFieldSpec, domain: &SampleDomain, n_samples: usize, seed: u64) -> Result<ConstantEstimate> {
    estimate_with(spec, domain, n_samples, seed, c1_at)
}

/// Estimate of the smallest `C₂ ≥ 0` for the second structure condition.
pub fn estimate_c2(spec: &dyn VectorFieldSpec, domain: &SampleDomain, n_samples: usize, seed: u64) -> Result<ConstantEstimate> {
    estimate_with(spec, domain, n_samples, seed, c2_at)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrobeniusPoint {
    pub point: Vec<f64>,
    pub effective_rank: usize,
    pub max_relative_residual: f64,
    /// Diffusion fields (1-based) vanishing at this point.
    pub vanishing_fields: Vec<usize>,
}

impl FrobeniusPoint {
    /// Rank drop below `min(n, m)` or a vanishing field.
    pub fn flagged(&self, n: usize, m: usize) -> bool {
        self.effective_rank < n.min(m) || !self.vanishing_fields.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrobeniusReport {
    pub max_relative_residual: f64,
    pub worst_point: Vec<f64>,
    pub points: Vec<FrobeniusPoint>,
    pub flagged_points: Vec<Vec<f64>>,
}

/// Largest relative least-squares residual of `[A_β, A_α]` (`β = 0..=m`,
/// `α = 1..=m`) against `span{A₁(x), …, A_m(x)}` over the sample points.
pub fn frobenius_check(spec: &dyn VectorFieldSpec, points: &[Vec<f64>]) -> Result<FrobeniusReport> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("frobenius check needs at least one sample point".into()));
    }
    let n = spec.dim();
    let m = spec.n_fields();
    let per_point: Vec<FrobeniusPoint> = points
        .par_iter()
        .map(|x| {
            let fields = diffusion_fields(spec, x)?;
            let mut frame = DMatrix::zeros(n, m);
            for (c, a) in fields.iter().enumerate() {
                frame.set_column(c, a);
            }
            let scale = frame.amax();
            let vanishing_fields: Vec<usize> = fields
                .iter()
                .enumerate()
                .filter(|(_, a)| a.amax() <= REL_TOL * scale.max(1.0))
                .map(|(i, _)| i + 1)
                .collect();
            let svd = frame.clone().svd(true, false);
            let u = svd.u.as_ref().expect("svd computed with u");
            let smax = svd.singular_values.max();
            let kept: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&i| smax > 0.0 && svd.singular_values[i] > REL_TOL * smax)
                .collect();
            let mut worst: f64 = 0.0;
            for beta in 0..=m {
                for alpha in 1..=m {
                    if beta == alpha {
                        continue;
                    }
                    let b = lie_bracket(spec, beta, alpha, x)?;
                    let norm = b.norm();
                    if norm <= 1e-14 * scale.max(1.0) {
                        continue;
                    }
                    let mut proj = DVector::zeros(n);
                    for &k in &kept {
                        let col = u.column(k);
                        proj += col * col.dot(&b);
                    }
                    worst = worst.max((b - proj).norm() / norm);
                }
            }
            Ok(FrobeniusPoint {
                point: x.clone(),
                effective_rank: kept.len(),
                max_relative_residual: worst,
                vanishing_fields,
            })
        })
        .collect::<Result<_>>()?;

    let (worst_idx, worst) = per_point
        .iter()
        .enumerate()
        .fold((0, 0.0_f64), |(bi, bv), (i, p)| if p.max_relative_residual > bv { (i, p.max_relative_residual) } else { (bi, bv) });
    let flagged_points = per_point.iter().filter(|p| p.flagged(n, m)).map(|p| p.point.clone()).collect();
    Ok(FrobeniusReport {
        max_relative_residual: worst,
        worst_point: per_point[worst_idx].point.clone(),
        points: per_point,
        flagged_points,
    })
}

/// Summary of the structure conditions over one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub c1_hat: f64,
    pub c2_hat: f64,
    pub k_hat: f64,
    pub c1_holds: bool,
    pub c2_holds: bool,
    pub frobenius_residual: f64,
    pub sample_count: usize,
    pub sample_domain: SampleDomain,
    pub c1: ConstantEstimate,
    pub c2: ConstantEstimate,
}

pub fn condition_report(spec: &dyn VectorFieldSpec, domain: &SampleDomain, n_samples: usize, seed: u64) -> Result<ConditionReport> {
    let c1 = estimate_c1(spec, domain, n_samples, seed)?;
    let c2 = estimate_c2(spec, domain, n_samples, seed)?;
    let frob = frobenius_check(spec, &sample_points(domain, n_samples, seed))?;
    Ok(ConditionReport {
        c1_hat: c1.value,
        c2_hat: c2.value,
        k_hat: c1.value + c2.value,
        c1_holds: c1.holds(),
        c2_holds: c2.holds(),
        frobenius_residual: frob.max_relative_residual,
        sample_count: n_samples,
        sample_domain: domain.clone(),
        c1,
        c2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::PolynomialFields;

    fn lifted_frame() -> PolynomialFields {
        // A₁ = ∂x, A₂ = x∂x + ∂y : [A₁, A₂] = A₁, elliptic everywhere
        let mut m2 = DMatrix::zeros(2, 2);
        m2[(0, 0)] = 1.0;
        PolynomialFields::affine(
            vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), m2],
            vec![DVector::zeros(2), DVector::from_column_slice(&[1.0, 0.0]), DVector::from_column_slice(&[0.0, 1.0])],
        )
        .unwrap()
    }

    #[test]
    fn commuting_constants_have_zero_constants() {
        let s = PolynomialFields::constant(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let dom = SampleDomain::cube(2, 1.0);
        let r = condition_report(&s, &dom, 16, 3).unwrap();
        assert_eq!(r.c1_hat, 0.0);
        assert_eq!(r.c2_hat, 0.0);
        assert_eq!(r.k_hat, r.c1_hat + r.c2_hat);
        assert_eq!(r.frobenius_residual, 0.0);
        assert!(r.c1_holds && r.c2_holds);
    }

    #[test]
    fn degenerate_constant_fields_still_hold() {
        // a single constant field in R²: denominator rank one, LHS ≥ 0
        let s = PolynomialFields::constant(&[0.0, 0.0], &[vec![1.0, 0.0]]).unwrap();
        let est = estimate_c1(&s, &SampleDomain::cube(2, 1.0), 8, 1).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(est.holds());
    }

    #[test]
    fn vanishing_frame_is_denominator_degenerate() {
        let s = PolynomialFields::constant(&[0.0], &[vec![0.0]]).unwrap();
        let err = estimate_c2(&s, &SampleDomain::cube(1, 1.0), 4, 1).unwrap_err();
        assert!(matches!(err, Error::DenominatorDegenerate { .. }));
    }

    #[test]
    fn heisenberg_fails_first_condition_but_not_second() {
        let s = PolynomialFields::heisenberg();
        let dom = SampleDomain::cube(3, 1.0);
        let c1 = estimate_c1(&s, &dom, 8, 2).unwrap();
        assert!(!c1.holds());
        let c2 = estimate_c2(&s, &dom, 8, 2).unwrap();
        assert!(c2.holds());
        assert!(c2.value.abs() < 1e-9);
    }

    #[test]
    fn identity_frame_drift_signs() {
        // A₀ = −x contracts: [A₀, A_α] = +e_α, form +2|ξ|², so C₂ = 0
        let contracting = PolynomialFields::identity_frame(-DMatrix::identity(2, 2)).unwrap();
        let dom = SampleDomain::cube(2, 1.0);
        let c2 = estimate_c2(&contracting, &dom, 8, 4).unwrap();
        assert!(c2.value.abs() < 1e-12);
        // A₀ = +x expands: form −2|ξ|², C₂ = 2
        let expanding = PolynomialFields::identity_frame(DMatrix::identity(2, 2)).unwrap();
        let c2 = estimate_c2(&expanding, &dom, 8, 4).unwrap();
        assert!((c2.value - 2.0).abs() < 1e-12);
        assert_eq!(estimate_c1(&expanding, &dom, 8, 4).unwrap().value, 0.0);
    }

    #[test]
    fn lifted_frame_is_integrable_with_positive_c1() {
        let s = lifted_frame();
        let dom = SampleDomain::cube(2, 1.0);
        let pts = sample_points(&dom, 8, 9);
        assert!(frobenius_check(&s, &pts).unwrap().max_relative_residual < 1e-12);
        let c1 = estimate_c1(&s, &dom, 8, 9).unwrap();
        assert!(c1.holds());
        assert!(c1.value > 0.0);
    }

    #[test]
    fn heisenberg_frobenius_residual_at_origin() {
        let s = PolynomialFields::heisenberg();
        let r = frobenius_check(&s, &[vec![0.0, 0.0, 0.0]]).unwrap();
        assert!((r.max_relative_residual - 1.0).abs() < 1e-12);
        assert_eq!(r.points[0].effective_rank, 2);
    }

    #[test]
    fn one_dimensional_frame_flags_origin() {
        // A₁ = ∂x, A₂ = x∂x on R
        let s = PolynomialFields::affine(
            vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::zeros(1), DVector::from_element(1, 1.0), DVector::zeros(1)],
        )
        .unwrap();
        let r = frobenius_check(&s, &[vec![-0.5], vec![0.0], vec![0.7]]).unwrap();
        assert_eq!(r.max_relative_residual, 0.0);
        assert_eq!(r.flagged_points, vec![vec![0.0]]);
    }

    #[test]
    fn sample_prefix_property() {
        let dom = SampleDomain::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let a = sample_points(&dom, 10, 5);
        let b = sample_points(&dom, 25, 5);
        assert_eq!(a[..], b[..10]);
        assert!(b.iter().all(|p| p[0] >= -1.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 2.0));
    }

    #[test]
    fn empty_box_rejected() {
        assert!(SampleDomain::new(vec![1.0], vec![0.0]).is_err());
        let s = PolynomialFields::heisenberg();
        assert!(estimate_c1(&s, &SampleDomain::cube(3, 1.0), 0, 1).is_err());
        assert!(frobenius_check(&s, &[]).is_err());
    }
}
