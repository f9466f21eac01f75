use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{entropic_oracle, BsdeProblem, Driver};
use crate::bounds::CheckResult;
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{self, MCEstimate};

const BSDE_TAG: u64 = 0xB5DE;

/// Weighted estimates refuse to run below this effective-sample fraction.
pub const ESS_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Record `(Y, Z, ∫|Z|²)` every this many steps (`t = 0` and `t = T` included).
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl McConfig {
    pub fn new(dt: f64, n_paths: usize, seed: u64) -> Self {
        Self { dt, n_paths, seed, record_every: 1 }
    }

    /// `steps` equal steps over the horizon, recorded every `record_every`.
    pub fn with_steps(horizon: f64, steps: usize, record_every: usize, n_paths: usize, seed: u64) -> Self {
        Self { dt: horizon / steps as f64, n_paths, seed, record_every }
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    fn steps(&self, horizon: f64) -> Result<usize> {
        if !(self.dt > 0.0) || self.n_paths == 0 || self.record_every == 0 {
            return Err(Error::InvalidParameter("need dt > 0, n_paths ≥ 1, record_every ≥ 1".into()));
        }
        let exact = horizon / self.dt;
        let steps = exact.round() as usize;
        if steps == 0 || (exact - steps as f64).abs() > 1e-9 * exact.max(1.0) {
            return Err(Error::InvalidParameter(format!("horizon {horizon} is not a multiple of dt {}", self.dt)));
        }
        if steps % self.record_every != 0 {
            return Err(Error::InvalidParameter("record_every must divide the step count".into()));
        }
        Ok(steps)
    }
}

/// Path functionals of one simulated Brownian path.
///
/// `y` holds the driver's solution; `z` and `int_z_sq` always refer to the
/// entropic `Z`, which is what the Girsanov weights are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdePath {
    pub y: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    /// Cumulative left-point sum of `|Z|² dt` up to each grid time.
    pub int_z_sq: Vec<f64>,
    /// `Y_T`.
    pub xi: f64,
    /// `Y_T − Y₀ − Σ Z·Δw − Σ h(Y, |Z|²) dt`.
    pub residual: f64,
    /// The residual with the Itô–Taylor term `½Σ(Δwᵀ∇²Y Δw − tr∇²Y dt)` removed.
    pub corrected_residual: f64,
    /// `log R_T` for `R = exp(Σ Z·Δw − ½Σ|Z|²dt)`.
    pub log_weight: f64,
    /// `log R_T` for the exponential of `½Z`.
    pub log_weight_half: f64,
    /// Largest `|Y|` over every time step.
    pub max_abs_y: f64,
}

#[derive(Debug, Clone)]
pub struct BsdePaths {
    pub driver: String,
    pub times: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub y0: f64,
    pub sup_norm: Option<f64>,
    pub paths: Vec<BsdePath>,
}

fn simulate_path(problem: &BsdeProblem, driver: &dyn Driver, cfg: &McConfig, steps: usize, p: u64) -> Result<BsdePath> {
    let m = problem.dim();
    let dt = cfg.dt;
    let sd = dt.sqrt();
    let mut r = rng::stream(rng::mix_seed(cfg.seed, BSDE_TAG), p);
    let mut x = problem.x0.clone();
    let mut dw = vec![0.0; m];
    let records = steps / cfg.record_every + 1;
    let mut out = BsdePath {
        y: Vec::with_capacity(records),
        z: Vec::with_capacity(records),
        int_z_sq: Vec::with_capacity(records),
        xi: 0.0,
        residual: 0.0,
        corrected_residual: 0.0,
        log_weight: 0.0,
        log_weight_half: 0.0,
        max_abs_y: 0.0,
    };
    let (mut martingale, mut correction, mut int_z_sq) = (0.0, 0.0, 0.0);
    let mut y0 = 0.0;
    for k in 0..=steps {
        let t = if k == steps { problem.horizon } else { k as f64 * dt };
        let log = entropic_oracle(problem, t, &x)?;
        let v = driver.transform(&log);
        if k == 0 {
            y0 = v.y;
        }
        out.max_abs_y = out.max_abs_y.max(v.y.abs());
        if k % cfg.record_every == 0 {
            out.y.push(v.y);
            out.z.push(log.z.as_slice().to_vec());
            out.int_z_sq.push(int_z_sq);
        }
        if k == steps {
            out.xi = v.y;
            break;
        }
        for w in dw.iter_mut() {
            *w = sd * rng::normal(&mut r);
        }
        let z_sq = v.z.norm_squared();
        let zdw: f64 = v.z.iter().zip(&dw).map(|(z, w)| z * w).sum();
        martingale += zdw + driver.h(v.y, z_sq) * dt;
        let mut quad = -v.hessian.trace() * dt;
        for i in 0..m {
            for j in 0..m {
                quad += dw[i] * v.hessian[(i, j)] * dw[j];
            }
        }
        correction += 0.5 * quad;
        let lz_sq = log.z.norm_squared();
        let lzdw: f64 = log.z.iter().zip(&dw).map(|(z, w)| z * w).sum();
        out.log_weight += lzdw - 0.5 * lz_sq * dt;
        out.log_weight_half += 0.5 * lzdw - 0.125 * lz_sq * dt;
        int_z_sq += lz_sq * dt;
        for (xi, w) in x.iter_mut().zip(&dw) {
            *xi += w;
        }
    }
    out.residual = out.xi - y0 - martingale;
    out.corrected_residual = out.residual - correction;
    Ok(out)
}

/// Walk the entropic oracle along `n_paths` seeded Brownian paths.
///
/// Results are independent of the worker count: each path has its own
/// random stream and all reductions are over the ordered path vector.
pub fn solve_bsde_mc(problem: &BsdeProblem, driver: &dyn Driver, cfg: &McConfig) -> Result<BsdePaths> {
    let steps = cfg.steps(problem.horizon)?;
    let paths: Vec<BsdePath> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| simulate_path(problem, driver, cfg, steps, p))
        .collect::<Result<_>>()?;
    let times = (0..=steps / cfg.record_every)
        .map(|i| if i * cfg.record_every == steps { problem.horizon } else { (i * cfg.record_every) as f64 * cfg.dt })
        .collect();
    let y0 = driver.transform(&entropic_oracle(problem, 0.0, &problem.x0)?).y;
    Ok(BsdePaths {
        driver: driver.name(),
        times,
        dt: cfg.dt,
        steps,
        seed: cfg.seed,
        y0,
        sup_norm: problem.sup_norm(),
        paths,
    })
}

/// Size of the discrete BSDE residual across paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// Mean `|residual|` (strong, order ½ in `dt`).
    pub strong: MCEstimate,
    /// Mean signed residual (weak, order 1).
    pub weak: MCEstimate,
    /// Mean `|corrected residual|` (pathwise order 1).
    pub corrected: MCEstimate,
    pub max_abs: f64,
}

impl BsdePaths {
    pub fn residual_stats(&self) -> ResidualStats {
        let col = |f: &dyn Fn(&BsdePath) -> f64| self.paths.iter().map(f).collect::<Vec<f64>>();
        let abs = col(&|p| p.residual.abs());
        ResidualStats {
            strong: stats::estimate(&abs, self.seed),
            weak: stats::estimate(&col(&|p| p.residual), self.seed),
            corrected: stats::estimate(&col(&|p| p.corrected_residual.abs()), self.seed),
            max_abs: abs.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Largest `|Y|` over all paths and recorded grid times.
    pub fn max_abs_y_on_grid(&self) -> f64 {
        self.paths.iter().flat_map(|p| p.y.iter()).fold(0.0, |m, y| m.max(y.abs()))
    }

    pub fn weights(&self, scale: WeightScale) -> GirsanovWeights {
        let terminal = self
            .paths
            .iter()
            .map(|p| match scale {
                WeightScale::Full => p.log_weight.exp(),
                WeightScale::Half => p.log_weight_half.exp(),
            })
            .collect();
        GirsanovWeights { terminal, trajectories: None, seed: self.seed }
    }

    fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|s| (s - t).abs() < 1e-9)
            .ok_or_else(|| Error::InvalidParameter(format!("t = {t} is not a recorded grid time")))
    }
}

/// Which exponential density to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScale {
    /// `E(Z·w)`: the measure under which `w − ∫Z dt` is Brownian.
    Full,
    /// `E(½Z·w)`: the measure under which `Y` itself is a martingale.
    Half,
}

/// Discrete stochastic-exponential weights `R_T` (and optionally `R_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovWeights {
    pub terminal: Vec<f64>,
    pub trajectories: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl GirsanovWeights {
    pub fn mean(&self) -> MCEstimate {
        stats::estimate(&self.terminal, self.seed)
    }

    pub fn ess(&self) -> f64 {
        stats::effective_sample_size(&self.terminal)
    }

    /// Error out when the effective sample size drops below 5 %.
    pub fn guard(&self) -> Result<()> {
        let ess = self.ess();
        let threshold = ESS_FLOOR * self.terminal.len() as f64;
        if !(ess >= threshold) {
            return Err(Error::WeightDegeneracy { ess, threshold });
        }
        Ok(())
    }

    /// `|mean R_T − 1| ≤ 3·stderr`.
    pub fn martingale_check(&self) -> CheckResult {
        let m = self.mean();
        CheckResult::equal("girsanov weight mean", 1.0, m.value, 3.0 * m.stderr + 1e-12)
    }
}

/// `R_t = exp(Σ s·Z·Δw − ½Σ s²|Z|²dt)` along supplied paths.
///
/// `z[p][k]` and `dw[p][k]` are the vectors at step `k` of path `p`; the
/// trajectory of each path starts at `R_0 = 1`.
pub fn girsanov_weights(z: &[Vec<Vec<f64>>], dw: &[Vec<Vec<f64>>], dt: f64, scale: f64, seed: u64) -> Result<GirsanovWeights> {
    if z.len() != dw.len() {
        return Err(Error::DimensionMismatch { expected: dw.len(), got: z.len() });
    }
    let mut trajectories = Vec::with_capacity(z.len());
    for (zp, wp) in z.iter().zip(dw) {
        if zp.len() != wp.len() {
            return Err(Error::DimensionMismatch { expected: wp.len(), got: zp.len() });
        }
        let mut log_r = 0.0;
        let mut traj = Vec::with_capacity(zp.len() + 1);
        traj.push(1.0);
        for (zk, wk) in zp.iter().zip(wp) {
            if zk.len() != wk.len() {
                return Err(Error::DimensionMismatch { expected: wk.len(), got: zk.len() });
            }
            let zdw: f64 = zk.iter().zip(wk).map(|(a, b)| a * b).sum();
            let zsq: f64 = zk.iter().map(|a| a * a).sum();
            log_r += scale * zdw - 0.5 * scale * scale * zsq * dt;
            traj.push(log_r.exp());
        }
        trajectories.push(traj);
    }
    let terminal = trajectories.iter().map(|t| *t.last().unwrap()).collect();
    Ok(GirsanovWeights { terminal, trajectories: Some(trajectories), seed })
}

/// `max |Y_t| ≤ ‖f₀‖∞ + tol` over paths and grid times.
pub fn max_principle_check(paths: &BsdePaths, tol: f64) -> Result<CheckResult> {
    let bound = paths
        .sup_norm
        .ok_or_else(|| Error::Precondition("maximum principle needs a bounded terminal".into()))?;
    Ok(CheckResult::upper("max principle |Y_t| <= |f0|_inf", bound, paths.max_abs_y_on_grid(), tol))
}

/// `E^Q[∫_t^T |Z_s|² ds]` with `Q = R_T·P`, self-normalised.
pub fn bmo_norm_estimate(paths: &BsdePaths, t: f64) -> Result<MCEstimate> {
    let i = paths.time_index(t)?;
    let w = paths.weights(WeightScale::Full);
    w.guard()?;
    let xs: Vec<f64> = paths.paths.iter().map(|p| p.int_z_sq.last().unwrap() - p.int_z_sq[i]).collect();
    Ok(stats::weighted_ratio(&w.terminal, &xs, paths.seed))
}

/// `Y₀` against the weighted average of `ξ` under `E(½Z·w)·P`.
pub fn q_representation_check(paths: &BsdePaths) -> Result<CheckResult> {
    if paths.driver != "entropic" {
        return Err(Error::Precondition("Q-representation applies to the entropic driver".into()));
    }
    let w = paths.weights(WeightScale::Half);
    w.guard()?;
    let xi: Vec<f64> = paths.paths.iter().map(|p| p.xi).collect();
    let est = stats::weighted_ratio(&w.terminal, &xi, paths.seed);
    Ok(CheckResult::equal("Y0 = E^Q'[xi]", paths.y0, est.value, 3.0 * est.stderr + 1e-12))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepViolation {
    pub from: f64,
    pub to: f64,
    pub difference: f64,
    pub stderr: f64,
    /// `difference / stderr`; below −3 is reported.
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmartingaleReport {
    pub k: f64,
    pub times: Vec<f64>,
    /// Weighted mean of `e^{Kt}|Z_t|²` at each grid time.
    pub a: Vec<MCEstimate>,
    /// Paired increments `a(t_{i+1}) − a(t_i)`.
    pub increments: Vec<MCEstimate>,
    pub violations: Vec<StepViolation>,
    pub passed: bool,
}

impl SubmartingaleReport {
    pub fn checks(&self) -> Vec<CheckResult> {
        self.increments
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let ctx = format!("submartingale step {}->{}", self.times[i], self.times[i + 1]);
                CheckResult::lower(ctx, 0.0, d.value, 3.0 * d.stderr)
            })
            .collect()
    }
}

/// Under `Q = R_T·P`, test that `t ↦ E^Q[e^{Kt}|Z_t|²]` is nondecreasing on the grid.
pub fn submartingale_diagnostic(paths: &BsdePaths, k: f64) -> Result<SubmartingaleReport> {
    if !(k >= 0.0) {
        return Err(Error::InvalidParameter(format!("K must be nonnegative, got {k}")));
    }
    let w = paths.weights(WeightScale::Full);
    w.guard()?;
    let value = |p: &BsdePath, i: usize| (k * paths.times[i]).exp() * p.z[i].iter().map(|z| z * z).sum::<f64>();
    let a: Vec<MCEstimate> = (0..paths.times.len())
        .map(|i| {
            let xs: Vec<f64> = paths.paths.iter().map(|p| value(p, i)).collect();
            stats::weighted_ratio(&w.terminal, &xs, paths.seed)
        })
        .collect();
    let increments: Vec<MCEstimate> = (0..paths.times.len() - 1)
        .map(|i| {
            let xs: Vec<f64> = paths.paths.iter().map(|p| value(p, i + 1) - value(p, i)).collect();
            stats::weighted_ratio(&w.terminal, &xs, paths.seed)
        })
        .collect();
    let violations: Vec<StepViolation> = increments
        .iter()
        .enumerate()
        .filter(|(_, d)| d.value < -3.0 * d.stderr)
        .map(|(i, d)| StepViolation {
            from: paths.times[i],
            to: paths.times[i + 1],
            difference: d.value,
            stderr: d.stderr,
            z_score: if d.stderr > 0.0 { d.value / d.stderr } else { f64::NEG_INFINITY },
        })
        .collect();
    Ok(SubmartingaleReport { k, times: paths.times.clone(), passed: violations.is_empty(), a, increments, violations })
}
