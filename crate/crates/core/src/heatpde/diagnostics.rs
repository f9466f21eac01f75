use super::solver::{heat_semigroup, Scheme, SolveConfig};
use super::ScalarField;
use crate::bounds::{CheckResult, Tolerance};
use crate::error::{Error, Result};

/// Where the time derivative of `f = log u` comes from.
#[derive(Debug, Clone, Copy)]
pub enum FtSource<'a> {
    /// `f_t = (½Δ_h u)/u`, the right side of the discrete PDE for `u`.
    Pde,
    /// Forward difference against a later snapshot.
    TimeDifference { next: &'a ScalarField, dt: f64 },
}

/// Log-derivative fields of a positive grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticFields {
    pub f: ScalarField,
    pub grad_f: Vec<ScalarField>,
    pub grad_f_sq: ScalarField,
    pub lap_f: ScalarField,
    pub f_t: ScalarField,
    /// `|∇f|² − 2f_t`
    pub g: ScalarField,
    /// `−Δf`
    pub g_alt: ScalarField,
    /// `|∇∇f|² − (Δf)²/n`
    pub h_flat: ScalarField,
}

pub fn log_diagnostics(u: &ScalarField, source: FtSource<'_>) -> Result<DiagnosticFields> {
    u.require_positive(f64::NAN)?;
    let grid = u.grid;
    let n = grid.dim();
    let f = u.map(f64::ln);
    let wrap = |values: Vec<f64>| ScalarField { grid, values };

    let grad: Vec<Vec<f64>> = (0..n).map(|a| f.derivative(a)).collect();
    let grad_f_sq: Vec<f64> = (0..grid.len()).map(|i| grad.iter().map(|g| g[i] * g[i]).sum()).collect();
    let second: Vec<Vec<f64>> = (0..n).map(|a| f.second_derivative(a)).collect();
    let lap_f: Vec<f64> = (0..grid.len()).map(|i| second.iter().map(|s| s[i]).sum()).collect();
    let mixed = if n == 2 { Some(f.mixed_derivative()) } else { None };

    let f_t: Vec<f64> = match source {
        FtSource::Pde => {
            let lap_u = u.laplacian();
            lap_u.iter().zip(&u.values).map(|(l, v)| 0.5 * l / v).collect()
        }
        FtSource::TimeDifference { next, dt } => {
            if next.grid != grid {
                return Err(Error::InvalidParameter("snapshot grids differ".into()));
            }
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
            }
            next.require_positive(dt)?;
            next.values.iter().zip(&f.values).map(|(v, fv)| (v.ln() - fv) / dt).collect()
        }
    };

    let g: Vec<f64> = grad_f_sq.iter().zip(&f_t).map(|(s, ft)| s - 2.0 * ft).collect();
    let g_alt: Vec<f64> = lap_f.iter().map(|l| -l).collect();
    let h_flat: Vec<f64> = (0..grid.len())
        .map(|i| {
            let mut hess_sq: f64 = second.iter().map(|s| s[i] * s[i]).sum();
            if let Some(m) = &mixed {
                hess_sq += 2.0 * m[i] * m[i];
            }
            hess_sq - lap_f[i] * lap_f[i] / n as f64
        })
        .collect();

    Ok(DiagnosticFields {
        grad_f: grad.into_iter().map(wrap).collect(),
        grad_f_sq: wrap(grad_f_sq),
        lap_f: wrap(lap_f),
        f_t: wrap(f_t),
        g: wrap(g),
        g_alt: wrap(g_alt),
        h_flat: wrap(h_flat),
        f,
    })
}

/// `max |G − G_alt|` against the default grid tolerance `10·h²·max(1, max|G_alt|)`.
pub fn check_identity_g(d: &DiagnosticFields, tolerance: Option<f64>) -> CheckResult {
    let diff = d.g.values.iter().zip(&d.g_alt.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let tol = tolerance.unwrap_or_else(|| Tolerance::Grid { h: d.f.grid.h(), scale: d.g_alt.max_abs() }.value());
    CheckResult::upper("identity G = -lap f", 0.0, diff, tol)
}

fn gradient_norm(u: &ScalarField) -> Vec<f64> {
    let grads: Vec<Vec<f64>> = (0..u.grid.dim()).map(|a| u.derivative(a)).collect();
    (0..u.grid.len()).map(|i| grads.iter().map(|g| g[i] * g[i]).sum::<f64>().sqrt()).collect()
}

/// Nodewise `|∇P_t u₀| ≤ P_t|∇u₀| + tol` with the flat-space constant.
///
/// Both sides use the explicit scheme at its stability limit, whose
/// discrete semigroup is positivity preserving.
pub fn semigroup_domination_check(u0: &ScalarField, t: f64, tolerance: Option<f64>) -> Result<CheckResult> {
    let grid = u0.grid;
    let dt = SolveConfig::explicit_limit(grid.h(), grid.dim());
    let cfg = SolveConfig::new(dt, Scheme::ExplicitEuler, t);
    let evolved = heat_semigroup(u0, &cfg)?;
    let lhs = gradient_norm(evolved.last());
    let abs_grad = ScalarField::new(grid, gradient_norm(u0))?;
    let rhs = heat_semigroup(&abs_grad, &cfg)?;
    let excess = lhs.iter().zip(&rhs.last().values).map(|(l, r)| l - r).fold(f64::NEG_INFINITY, f64::max);
    let tol = tolerance.unwrap_or(1e-6 + 10.0 * grid.h() * grid.h());
    Ok(CheckResult::upper(format!("semigroup domination t={t}"), 0.0, excess, tol))
}

#[cfg(test)]
mod tests {
    use super::super::{solve_heat, InitialData, TorusGrid};
    use super::*;

    #[test]
    fn constant_field_diagnostics_vanish() {
        let g = TorusGrid::periodic(2, 16).unwrap();
        let u = InitialData::Constant { value: 3.0 }.sample(g).unwrap();
        let d = log_diagnostics(&u, FtSource::Pde).unwrap();
        for field in [&d.grad_f_sq, &d.g, &d.g_alt, &d.h_flat] {
            assert!(field.max_abs() < 1e-14);
        }
        assert_eq!(check_identity_g(&d, None).observed, 0.0);
    }

    #[test]
    fn exp_cosine_gradient() {
        let g = TorusGrid::periodic(1, 256).unwrap();
        let a = 0.7;
        let u = InitialData::ExpCosine { a }.sample(g).unwrap();
        let d = log_diagnostics(&u, FtSource::Pde).unwrap();
        let err = (0..g.len())
            .map(|i| (d.grad_f_sq.values[i] - (a * g.coords(i)[0].sin()).powi(2)).abs())
            .fold(0.0, f64::max);
        assert!(err < a * a * g.h() * g.h(), "err {err}");
    }

    #[test]
    fn identity_g_converges_at_second_order() {
        let diff = |n: usize| {
            let g = TorusGrid::periodic(1, n).unwrap();
            let u0 = InitialData::ExpCosine { a: 1.0 }.sample(g).unwrap();
            let u = solve_heat(&u0, &SolveConfig::new(1e-3, Scheme::CrankNicolson, 0.5)).unwrap();
            let d = log_diagnostics(u.last(), FtSource::Pde).unwrap();
            let c = check_identity_g(&d, None);
            assert!(c.passed);
            c.observed
        };
        let (d1, d2) = (diff(128), diff(256));
        assert!(d2 <= 1e-3, "{d2}");
        let ratio = d1 / d2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn h_flat_nonnegative_in_2d() {
        let g = TorusGrid::periodic(2, 32).unwrap();
        let u = InitialData::random_trig_poly(2, 5, 3, 0.2, 4).sample(g).unwrap().map(|v| (v).exp());
        let d = log_diagnostics(&u, FtSource::Pde).unwrap();
        assert!(d.h_flat.min() >= -10.0 * g.h() * g.h());
    }

    #[test]
    fn time_difference_source() {
        let g = TorusGrid::periodic(1, 64).unwrap();
        let u0 = InitialData::ExpCosine { a: 0.5 }.sample(g).unwrap();
        let dt = 1e-4;
        let traj = solve_heat(&u0, &SolveConfig::new(dt, Scheme::CrankNicolson, dt)).unwrap();
        let d_pde = log_diagnostics(&u0, FtSource::Pde).unwrap();
        let d_td = log_diagnostics(&u0, FtSource::TimeDifference { next: traj.last(), dt }).unwrap();
        let gap = d_pde.f_t.values.iter().zip(&d_td.f_t.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-3, "{gap}");
    }

    #[test]
    fn domination_holds() {
        let g = TorusGrid::periodic(1, 64).unwrap();
        let cos = InitialData::Cosine { a: 0.8, offset: 0.0 }.sample(g).unwrap();
        assert!(semigroup_domination_check(&cos, 0.5, None).unwrap().passed);
        let c = InitialData::Constant { value: 1.0 }.sample(g).unwrap();
        let r = semigroup_domination_check(&c, 0.5, None).unwrap();
        assert!(r.passed && r.observed <= 0.0);
    }
}
