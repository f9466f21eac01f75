//! The reciprocal identity `Y₀ = 1/(T/n + E^Q[1/Y_T])` for a positive
//! process with `dY = Y²/n dt + dM` under `Q`.
//!
//! For a terminal `G_T(x)` the process is `Y_t = y(T − t, X_t)` where `y`
//! solves the Riccati equation `∂_τ y = ½Δy − y²/n` and `X` has drift
//! `∇log y` under `Q`. With `U = 1/y` one gets `∂_τU = ½ΔU − ∇U·∇log U + 1/n`,
//! so `U(T − t, X_t) + t/n` is a `Q`-martingale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{liyau_upper, Curvature};
use crate::error::{Error, Result};
use crate::heatpde::{ScalarField, SolveConfig, TorusGrid};
use crate::rng;
use crate::stats::{self, MCEstimate};

const LIYAU_TAG: u64 = 0x1A7A;

/// Terminal `G_T(x) = C` or `C·(1 + ε cos x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum LiyauTerminal {
    Constant,
    Cosine { eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiyauDemoConfig {
    pub c: f64,
    pub n: usize,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_terminal")]
    pub terminal: LiyauTerminal,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_grid() -> usize {
    256
}
fn default_terminal() -> LiyauTerminal {
    LiyauTerminal::Constant
}

impl LiyauDemoConfig {
    pub fn constant(c: f64, n: usize, horizon: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            c,
            n,
            horizon,
            n_paths,
            seed,
            dt: default_dt(),
            grid_points: default_grid(),
            x0: 0.0,
            terminal: LiyauTerminal::Constant,
        }
    }

    fn terminal_value(&self, x: f64) -> f64 {
        match self.terminal {
            LiyauTerminal::Constant => self.c,
            LiyauTerminal::Cosine { eps } => self.c * (1.0 + eps * x.cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiyauDemo {
    /// `1/(T/n + 1/C)` for a constant terminal, otherwise the Riccati value.
    pub deterministic: f64,
    /// `y(T, x₀)` from the Riccati equation on the torus grid.
    pub oracle: f64,
    /// Monte Carlo `E^Q[1/Y_T]`.
    pub reciprocal_mean: MCEstimate,
    /// `1/(T/n + E^Q[1/Y_T])` with a delta-method standard error.
    pub mc: MCEstimate,
    /// `C/((T/n)C + 1)`.
    pub bound: f64,
}

/// Splitting scheme for `∂_τ y = ½Δy − y²/n`, recorded every `record_dt`:
/// an explicit diffusion step followed by the exact reaction flow
/// `y ↦ y/(1 + dt·y/n)`, which stays positive for any size of `y`.
pub fn riccati_on_torus(y0: &ScalarField, n: usize, horizon: f64, record_dt: f64) -> Result<Vec<ScalarField>> {
    let grid = y0.grid;
    y0.require_positive(0.0)?;
    let records = (horizon / record_dt).round() as usize;
    if records == 0 || ((horizon / record_dt) - records as f64).abs() > 1e-9 {
        return Err(Error::InvalidParameter("horizon must be a multiple of the record step".into()));
    }
    let limit = SolveConfig::explicit_limit(grid.h(), grid.dim());
    let sub = (record_dt / limit).ceil() as usize;
    let dt = record_dt / sub as f64;
    let inv_n = 1.0 / n as f64;
    let mut y = y0.clone();
    let mut out = Vec::with_capacity(records + 1);
    out.push(y.clone());
    for r in 0..records {
        for _ in 0..sub {
            let lap = y.laplacian();
            for (v, l) in y.values.iter_mut().zip(lap) {
                let diffused = *v + 0.5 * dt * l;
                *v = diffused / (1.0 + dt * inv_n * diffused);
            }
        }
        y.require_positive((r + 1) as f64 * record_dt)?;
        out.push(y.clone());
    }
    Ok(out)
}

pub fn liyau_bsde_demo(cfg: &LiyauDemoConfig) -> Result<LiyauDemo> {
    if !(cfg.c > 0.0) || cfg.n == 0 || !(cfg.horizon > 0.0) || cfg.n_paths < 2 {
        return Err(Error::InvalidParameter("need C > 0, n ≥ 1, T > 0 and at least two paths".into()));
    }
    let nf = cfg.n as f64;
    let bound = liyau_upper(cfg.horizon, Curvature::Finite(cfg.c), cfg.n)?;

    let grid = TorusGrid::periodic(1, cfg.grid_points)?;
    let g0 = ScalarField::from_fn(grid, |x| cfg.terminal_value(x[0]))?;
    if g0.min() <= 0.0 {
        return Err(Error::Precondition(format!("terminal must be positive, min = {}", g0.min())));
    }
    let snaps = riccati_on_torus(&g0, cfg.n, cfg.horizon, cfg.dt)?;
    let drift: Vec<ScalarField> =
        snaps.iter().map(|s| ScalarField { grid, values: s.map(f64::ln).derivative(0) }).collect();
    let oracle = snaps.last().unwrap().interpolate(&[cfg.x0])?;
    let deterministic = match cfg.terminal {
        LiyauTerminal::Constant => 1.0 / (cfg.horizon / nf + 1.0 / cfg.c),
        LiyauTerminal::Cosine { .. } => oracle,
    };

    let steps = snaps.len() - 1;
    let sd = cfg.dt.sqrt();
    let samples: Vec<(f64, f64)> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut r = rng::stream(rng::mix_seed(cfg.seed, LIYAU_TAG), p);
            let mut x = cfg.x0;
            let mut log_w = 0.0;
            for k in 0..steps {
                // time-to-go T − t_k
                let b = drift[steps - k].interpolate(&[x])?;
                let dw = sd * rng::normal(&mut r);
                log_w += b * dw - 0.5 * b * b * cfg.dt;
                x += dw;
            }
            let g = cfg.terminal_value(x);
            if !(g > 0.0) {
                return Err(Error::Precondition(format!("nonpositive terminal sample {g} on path {p}")));
            }
            Ok((log_w.exp(), 1.0 / g))
        })
        .collect::<Result<_>>()?;
    let (weights, values): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    let reciprocal_mean = stats::weighted_ratio(&weights, &values, cfg.seed);
    let y0 = 1.0 / (cfg.horizon / nf + reciprocal_mean.value);
    let mc = MCEstimate { value: y0, stderr: reciprocal_mean.stderr * y0 * y0, n_paths: cfg.n_paths, seed: cfg.seed };
    Ok(LiyauDemo { deterministic, oracle, reciprocal_mean, mc, bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_terminal_matches_bound() {
        let d = liyau_bsde_demo(&LiyauDemoConfig::constant(1.0, 1, 1.0, 100, 3)).unwrap();
        assert!((d.deterministic - 0.5).abs() < 1e-12);
        assert!((d.bound - 0.5).abs() < 1e-15);
        assert_eq!(d.mc.stderr, 0.0);
        assert!((d.mc.value - 0.5).abs() < 1e-12);
        // the reaction substep is the exact flow of y' = −y²/n
        assert!((d.oracle - 0.5).abs() < 1e-12);
    }

    #[test]
    fn large_c_recovers_n_over_t() {
        let d = liyau_bsde_demo(&LiyauDemoConfig::constant(1e6, 1, 1.0, 10, 1)).unwrap();
        assert!((d.deterministic - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_nonpositive_terminal() {
        let mut cfg = LiyauDemoConfig::constant(1.0, 1, 1.0, 10, 1);
        cfg.terminal = LiyauTerminal::Cosine { eps: 1.5 };
        assert!(matches!(liyau_bsde_demo(&cfg), Err(Error::Precondition(_))));
    }
}
