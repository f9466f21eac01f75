use serde::{Deserialize, Serialize};

use super::ScalarField;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExplicitEuler,
    #[default]
    CrankNicolson,
}

/// Stability margin applied to the explicit time-step limit `h²/(2n)`.
const EXPLICIT_SAFETY: f64 = 0.9;
const CG_REL_TOL: f64 = 1e-14;
const CG_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub t_end: f64,
    /// Times at which to record the state; `t_end` is always recorded.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl SolveConfig {
    pub fn new(dt: f64, scheme: Scheme, t_end: f64) -> Self {
        Self { dt, scheme, t_end, snapshot_times: Vec::new() }
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    /// Largest admissible explicit step on a grid with spacing `h` in dimension `dim`.
    pub fn explicit_limit(h: f64, dim: usize) -> f64 {
        EXPLICIT_SAFETY * h * h / (2.0 * dim as f64)
    }

    fn validate(&self, h: f64, dim: usize) -> Result<Vec<f64>> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if self.scheme == Scheme::ExplicitEuler {
            let limit = Self::explicit_limit(h, dim);
            if self.dt > limit {
                return Err(Error::Unstable { dt: self.dt, limit });
            }
        }
        let mut times = self.snapshot_times.clone();
        if times.iter().any(|&t| !(0.0..=self.t_end).contains(&t)) {
            return Err(Error::InvalidParameter("snapshot times must lie in [0, t_end]".into()));
        }
        times.push(self.t_end);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        Ok(times)
    }
}

/// Recorded states of a solve, in increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<ScalarField>,
}

impl Trajectory {
    pub fn last(&self) -> &ScalarField {
        self.snapshots.last().expect("trajectory always records t_end")
    }

    /// Snapshot recorded at time `t` (to within 1e-12).
    pub fn at(&self, t: f64) -> Option<&ScalarField> {
        self.times.iter().position(|&s| (s - t).abs() < 1e-12).map(|i| &self.snapshots[i])
    }
}

/// Positive solution of `∂u/∂t = ½Δ_h u`; aborts on loss of positivity.
pub fn solve_heat(u0: &ScalarField, cfg: &SolveConfig) -> Result<Trajectory> {
    u0.require_positive(0.0)?;
    evolve(u0, cfg, true)
}

/// The discrete heat semigroup applied to data of any sign.
pub fn heat_semigroup(u0: &ScalarField, cfg: &SolveConfig) -> Result<Trajectory> {
    evolve(u0, cfg, false)
}

fn evolve(u0: &ScalarField, cfg: &SolveConfig, positive: bool) -> Result<Trajectory> {
    let grid = u0.grid;
    let targets = cfg.validate(grid.h(), grid.dim())?;
    let mut state = u0.clone();
    let mut t = 0.0;
    let mut out = Trajectory { times: Vec::new(), snapshots: Vec::new() };
    for &target in &targets {
        while target - t > 1e-12 {
            let step = cfg.dt.min(target - t);
            match cfg.scheme {
                Scheme::ExplicitEuler => explicit_step(&mut state, step),
                Scheme::CrankNicolson => crank_nicolson_step(&mut state, step)?,
            }
            t = if target - t - step <= 1e-12 { target } else { t + step };
            if state.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("heat solver state at t = {t}")));
            }
            if positive {
                state.require_positive(t)?;
            }
        }
        out.times.push(target);
        out.snapshots.push(state.clone());
    }
    Ok(out)
}

fn half_laplacian(u: &ScalarField, buf: &[f64], out: &mut [f64]) {
    let g = &u.grid;
    let inv = 0.5 / (g.h() * g.h());
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = -2.0 * g.dim() as f64 * buf[i];
        for axis in 0..g.dim() {
            acc += buf[g.shift(i, axis, 1)] + buf[g.shift(i, axis, -1)];
        }
        *o = acc * inv;
    }
}

fn explicit_step(u: &mut ScalarField, dt: f64) {
    let mut lap = vec![0.0; u.values.len()];
    half_laplacian(u, &u.values, &mut lap);
    for (v, l) in u.values.iter_mut().zip(lap) {
        *v += dt * l;
    }
}

/// `(I − dt/2·L) u⁺ = (I + dt/2·L) u` with `L = ½Δ_h`, solved by conjugate gradients.
fn crank_nicolson_step(u: &mut ScalarField, dt: f64) -> Result<()> {
    let n = u.values.len();
    let mut lap = vec![0.0; n];
    half_laplacian(u, &u.values, &mut lap);
    let rhs: Vec<f64> = u.values.iter().zip(&lap).map(|(v, l)| v + 0.5 * dt * l).collect();

    let apply = |x: &[f64], out: &mut [f64], scratch: &mut [f64]| {
        half_laplacian(u, x, scratch);
        for i in 0..n {
            out[i] = x[i] - 0.5 * dt * scratch[i];
        }
    };

    // warm start from the current state
    let mut x = u.values.clone();
    let mut scratch = vec![0.0; n];
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax, &mut scratch);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let target = CG_REL_TOL * CG_REL_TOL * rhs.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut ap = vec![0.0; n];
    let mut iter = 0;
    while rr > target {
        if iter == CG_MAX_ITER {
            return Err(Error::SolverDivergence { residual: rr.sqrt(), iterations: iter });
        }
        apply(&p, &mut ap, &mut scratch);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iter += 1;
    }
    u.values = x;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{InitialData, TorusGrid};
    use super::*;

    fn cosine_error(n: usize, dt: f64, scheme: Scheme) -> f64 {
        let g = TorusGrid::periodic(1, n).unwrap();
        let u0 = InitialData::Cosine { a: 0.5, offset: 1.0 }.sample(g).unwrap();
        let traj = solve_heat(&u0, &SolveConfig::new(dt, scheme, 1.0)).unwrap();
        let decay = 0.5 * (-0.5f64).exp();
        (0..n).map(|i| (traj.last().values[i] - 1.0 - decay * g.coords(i)[0].cos()).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_is_stationary() {
        let g = TorusGrid::periodic(2, 16).unwrap();
        let u0 = InitialData::Constant { value: 2.0 }.sample(g).unwrap();
        for scheme in [Scheme::ExplicitEuler, Scheme::CrankNicolson] {
            let traj = solve_heat(&u0, &SolveConfig::new(0.01, scheme, 0.5)).unwrap();
            assert!(traj.last().values.iter().all(|&v| (v - 2.0).abs() < 1e-14));
        }
    }

    #[test]
    fn cosine_mode_converges_at_second_order_in_space() {
        let e1 = cosine_error(16, 1e-4, Scheme::CrankNicolson);
        let e2 = cosine_error(32, 1e-4, Scheme::CrankNicolson);
        let slope = (e1 / e2).log2();
        assert!((1.7..2.3).contains(&slope), "slope {slope}");
    }

    #[test]
    fn crank_nicolson_second_order_in_time() {
        // fine grid so the spatial error is negligible against the temporal one
        let e1 = cosine_error(1024, 0.2, Scheme::CrankNicolson);
        let e2 = cosine_error(1024, 0.1, Scheme::CrankNicolson);
        let slope = (e1 / e2).log2();
        assert!((1.7..2.3).contains(&slope), "slope {slope}");
    }

    #[test]
    fn explicit_stability_guard() {
        let g = TorusGrid::periodic(1, 64).unwrap();
        let u0 = InitialData::Constant { value: 1.0 }.sample(g).unwrap();
        let limit = SolveConfig::explicit_limit(g.h(), 1);
        assert!(matches!(
            solve_heat(&u0, &SolveConfig::new(limit * 1.01, Scheme::ExplicitEuler, 0.1)),
            Err(Error::Unstable { .. })
        ));
        assert!(solve_heat(&u0, &SolveConfig::new(limit, Scheme::ExplicitEuler, 0.1)).is_ok());
    }

    #[test]
    fn mass_and_extrema() {
        let g = TorusGrid::periodic(1, 64).unwrap();
        let u0 = InitialData::ExpCosine { a: 1.0 }.sample(g).unwrap();
        let times = vec![0.1, 0.2, 0.4, 0.8];
        for (scheme, dt, tol) in [
            (Scheme::ExplicitEuler, SolveConfig::explicit_limit(g.h(), 1), 1e-12),
            (Scheme::CrankNicolson, 0.01, 1e-12),
        ] {
            let traj = solve_heat(&u0, &SolveConfig::new(dt, scheme, 1.0).with_snapshots(times.clone())).unwrap();
            assert_eq!(traj.times.len(), 5);
            let mut prev = u0.clone();
            for s in &traj.snapshots {
                assert!((s.mean() - u0.mean()).abs() < tol * u0.mean());
                assert!(s.max() <= prev.max() + 1e-12 && s.min() >= prev.min() - 1e-12);
                prev = s.clone();
            }
        }
    }

    #[test]
    fn positivity_loss_is_reported() {
        let g = TorusGrid::periodic(1, 32).unwrap();
        let u0 = InitialData::Cosine { a: 1.0, offset: 0.5 }.sample(g).unwrap();
        assert!(matches!(solve_heat(&u0, &SolveConfig::new(0.01, Scheme::CrankNicolson, 0.1)), Err(Error::PositivityLoss { .. })));
        assert!(heat_semigroup(&u0, &SolveConfig::new(0.01, Scheme::CrankNicolson, 0.1)).is_ok());
    }
}
