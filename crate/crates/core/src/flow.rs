//! Stochastic flow `φ` of `dφ = A₀ dt + Σ A_α ∘ dw^α`, its Jacobian `J` and
//! the independently evolved inverse `K`.
//!
//! Everything is integrated in Itô form. The drift of `φ` carries the
//! correction `½ Σ_α (DA_α) A_α`; `J` and `K` follow the Itô equations
//!
//! ```text
//! dJ =  Σ DA_α J dw^α + [DA₀ + ½Σ(A_α·∇DA_α + DA_α DA_α)] J dt
//! dK = −Σ K DA_α dw^α − K [DA₀ + ½Σ(A_α·∇DA_α − DA_α DA_α)] dt
//! ```
//!
//! so that `d(JK) = 0` exactly in continuous time.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::VectorFieldSpec;
use crate::rng;

const FLOW_TAG: u64 = 0xF10A;

/// Largest tolerated fraction of paths excluded for blow-up.
pub const MAX_EXCLUDED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Adds `Σ_{α,β} (L_β g_α)·½(Δw_αΔw_β − δ_{αβ}dt)` to every diffusion term,
    /// without Lévy areas.
    Milstein,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    /// Number of finer Brownian increments summed into each step. Two runs
    /// with the same seed and the same `dt / brownian_substeps` see the same
    /// Brownian path, which makes refinement studies pathwise.
    #[serde(default = "one")]
    pub brownian_substeps: usize,
    /// Keep every `k`-th state (plus the initial one); `None` keeps only the final state.
    #[serde(default)]
    pub record_stride: Option<usize>,
}

fn one() -> usize {
    1
}

impl FlowConfig {
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64, x0: Vec<f64>) -> Self {
        Self { horizon, dt, n_paths, seed, x0, scheme: Scheme::default(), brownian_substeps: 1, record_stride: None }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.brownian_substeps = substeps;
        self
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = Some(stride);
        self
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn validate(&self, spec: &dyn VectorFieldSpec) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon >= self.dt) {
            return Err(Error::InvalidParameter(format!("need 0 < dt ≤ horizon (dt={}, T={})", self.dt, self.horizon)));
        }
        if ((self.horizon / self.dt) - self.steps() as f64).abs() > 1e-9 {
            return Err(Error::InvalidParameter("horizon must be a multiple of dt".into()));
        }
        if self.n_paths == 0 || self.brownian_substeps == 0 || self.record_stride == Some(0) {
            return Err(Error::InvalidParameter("n_paths, substeps and record stride must be positive".into()));
        }
        if self.x0.len() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), got: self.x0.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub phi: DVector<f64>,
    pub j: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl FlowState {
    pub fn initial(x0: &[f64]) -> Self {
        let n = x0.len();
        Self { t: 0.0, phi: DVector::from_column_slice(x0), j: DMatrix::identity(n, n), k: DMatrix::identity(n, n) }
    }

    /// `‖J·K − I‖∞` (maximum absolute row sum).
    pub fn jk_residual(&self) -> f64 {
        let n = self.phi.len();
        let d = &self.j * &self.k - DMatrix::<f64>::identity(n, n);
        d.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.phi.iter().chain(self.j.iter()).chain(self.k.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub final_state: FlowState,
    /// Largest `‖JK − I‖∞` seen along the path.
    pub max_residual: f64,
    pub blown_up: bool,
    pub records: Vec<FlowState>,
}

/// Seeded collection of simulated flow paths.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub brownian_substeps: usize,
    pub paths: Vec<PathResult>,
    pub excluded: usize,
}

/// Brownian increments for one path, `steps × m`, regenerated from `(seed, path)`.
pub fn brownian_increments(seed: u64, path: u64, steps: usize, m: usize, dt: f64, substeps: usize) -> Vec<Vec<f64>> {
    let mut r = rng::stream(rng::mix_seed(seed, FLOW_TAG), path);
    let sd = (dt / substeps as f64).sqrt();
    (0..steps)
        .map(|_| {
            let mut dw = vec![0.0; m];
            for _ in 0..substeps {
                for w in dw.iter_mut() {
                    *w += sd * rng::normal(&mut r);
                }
            }
            dw
        })
        .collect()
}

/// `(∂DA·v)[(j, k)] = Σ_i ∂²A^j/∂x^k∂x^i v^i`.
fn directional_jacobian(hessians: &[DMatrix<f64>], v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let mut out = DMatrix::zeros(n, n);
    for (j, h) in hessians.iter().enumerate() {
        let row = h * v;
        for k in 0..n {
            out[(j, k)] = row[k];
        }
    }
    out
}

struct LocalData {
    a: Vec<DVector<f64>>,
    da: Vec<DMatrix<f64>>,
    // A_α·∇DA_α summed over α, and Σ DA_α DA_α
    a_dda: DMatrix<f64>,
    da_da: DMatrix<f64>,
    hess: Vec<Vec<DMatrix<f64>>>,
}

fn local_data(spec: &dyn VectorFieldSpec, x: &[f64], keep_hessians: bool) -> Result<LocalData> {
    let (n, m) = (spec.dim(), spec.n_fields());
    let mut a = Vec::with_capacity(m + 1);
    let mut da = Vec::with_capacity(m + 1);
    let mut hess = Vec::new();
    let mut a_dda = DMatrix::zeros(n, n);
    let mut da_da = DMatrix::zeros(n, n);
    for alpha in 0..=m {
        let v = spec.value(alpha, x)?;
        let d = spec.jacobian(alpha, x)?;
        if alpha > 0 {
            let h = spec.hessians(alpha, x)?;
            a_dda += directional_jacobian(&h, &v);
            da_da += &d * &d;
            if keep_hessians {
                hess.push(h);
            }
        }
        a.push(v);
        da.push(d);
    }
    Ok(LocalData { a, da, a_dda, da_da, hess })
}

fn step(spec: &dyn VectorFieldSpec, state: &mut FlowState, dw: &[f64], dt: f64, scheme: Scheme) -> Result<()> {
    let m = spec.n_fields();
    let milstein = scheme == Scheme::Milstein;
    let loc = local_data(spec, state.phi.as_slice(), milstein)?;

    let mut drift = loc.a[0].clone();
    for alpha in 1..=m {
        drift += 0.5 * (&loc.da[alpha] * &loc.a[alpha]);
    }
    let j_drift = &loc.da[0] + 0.5 * (&loc.a_dda + &loc.da_da);
    let k_drift = &loc.da[0] + 0.5 * (&loc.a_dda - &loc.da_da);

    let mut dphi = drift * dt;
    let mut dj = &j_drift * &state.j * dt;
    let mut dk = -(&state.k * &k_drift) * dt;
    for alpha in 1..=m {
        let w = dw[alpha - 1];
        dphi += &loc.a[alpha] * w;
        dj += &loc.da[alpha] * &state.j * w;
        dk -= &state.k * &loc.da[alpha] * w;
    }

    if milstein {
        for alpha in 1..=m {
            for beta in 1..=m {
                let mut iab = 0.5 * dw[alpha - 1] * dw[beta - 1];
                if alpha == beta {
                    iab -= 0.5 * dt;
                }
                if iab == 0.0 {
                    continue;
                }
                let d_da_alpha = directional_jacobian(&loc.hess[alpha - 1], &loc.a[beta]);
                dphi += (&loc.da[alpha] * &loc.a[beta]) * iab;
                dj += (&d_da_alpha * &state.j + &loc.da[alpha] * (&loc.da[beta] * &state.j)) * iab;
                dk += (&state.k * &loc.da[beta] * &loc.da[alpha] - &state.k * &d_da_alpha) * iab;
            }
        }
    }

    state.phi += dphi;
    state.j += dj;
    state.k += dk;
    state.t += dt;
    Ok(())
}

fn simulate_path(spec: &dyn VectorFieldSpec, cfg: &FlowConfig, path: u64) -> Result<PathResult> {
    let m = spec.n_fields();
    let steps = cfg.steps();
    let increments = brownian_increments(cfg.seed, path, steps, m, cfg.dt, cfg.brownian_substeps);
    let mut state = FlowState::initial(&cfg.x0);
    let mut records = Vec::new();
    if cfg.record_stride.is_some() {
        records.push(state.clone());
    }
    let mut max_residual = 0.0f64;
    for (s, dw) in increments.iter().enumerate() {
        step(spec, &mut state, dw, cfg.dt, cfg.scheme)?;
        if !state.is_finite() {
            return Ok(PathResult { final_state: state, max_residual: f64::INFINITY, blown_up: true, records });
        }
        max_residual = max_residual.max(state.jk_residual());
        if let Some(k) = cfg.record_stride {
            if (s + 1) % k == 0 {
                records.push(state.clone());
            }
        }
    }
    // keep the clock free of accumulated rounding
    state.t = steps as f64 * cfg.dt;
    Ok(PathResult { final_state: state, max_residual, blown_up: false, records })
}

/// Simulate `n_paths` independent flow paths in parallel.
///
/// Paths with non-finite states are flagged and excluded; more than 0.1 %
/// exclusions abort with [`Error::TooManyExclusions`].
pub fn simulate_flow(spec: &dyn VectorFieldSpec, cfg: &FlowConfig) -> Result<PathEnsemble> {
    cfg.validate(spec)?;
    let paths: Vec<PathResult> =
        (0..cfg.n_paths as u64).into_par_iter().map(|p| simulate_path(spec, cfg, p)).collect::<Result<_>>()?;
    let excluded = paths.iter().filter(|p| p.blown_up).count();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * cfg.n_paths as f64 {
        return Err(Error::TooManyExclusions { excluded, total: cfg.n_paths });
    }
    Ok(PathEnsemble {
        n: spec.dim(),
        m: spec.n_fields(),
        dt: cfg.dt,
        steps: cfg.steps(),
        seed: cfg.seed,
        brownian_substeps: cfg.brownian_substeps,
        paths,
        excluded,
    })
}

/// Max over retained paths and times of `‖J·K − I‖∞`.
pub fn jk_identity_residual(ensemble: &PathEnsemble) -> f64 {
    ensemble.paths.iter().filter(|p| !p.blown_up).map(|p| p.max_residual).fold(0.0, f64::max)
}

/// The two evaluations of `Z^α = (A_α f)(φ)` at one flow state.
#[derive(Debug, Clone, PartialEq)]
pub struct ZEvaluation {
    /// `A_α(φ)·∇f(φ)`.
    pub direct: DVector<f64>,
    /// `A_α(φ)ᵀ Kᵀ Y` with `Y = Jᵀ∇f(φ)`, the gradient of `f(φ_t(x))` in the start point.
    pub transported: DVector<f64>,
    pub discrepancy: f64,
}

pub fn z_from_flow(spec: &dyn VectorFieldSpec, state: &FlowState, grad_f: &DVector<f64>) -> Result<ZEvaluation> {
    let m = spec.n_fields();
    if grad_f.len() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: grad_f.len() });
    }
    if grad_f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient supplied to z_from_flow".into()));
    }
    let y = state.j.transpose() * grad_f;
    let transported_grad = state.k.transpose() * y;
    let mut direct = DVector::zeros(m);
    let mut transported = DVector::zeros(m);
    for alpha in 1..=m {
        let a = spec.value(alpha, state.phi.as_slice())?;
        direct[alpha - 1] = a.dot(grad_f);
        transported[alpha - 1] = a.dot(&transported_grad);
    }
    let discrepancy = (&direct - &transported).amax();
    Ok(ZEvaluation { direct, transported, discrepancy })
}

/// Evaluate `Z` on every retained path's final state, with `grad_f` the
/// Euclidean gradient of `f` at the current time.
pub fn z_on_ensemble<G>(spec: &dyn VectorFieldSpec, ensemble: &PathEnsemble, grad_f: G) -> Result<Vec<ZEvaluation>>
where
    G: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    ensemble
        .paths
        .par_iter()
        .filter(|p| !p.blown_up)
        .map(|p| z_from_flow(spec, &p.final_state, &grad_f(&p.final_state.phi)?))
        .collect()
}

/// Mean and covariance of `φ` at the horizon, with standard errors of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub retained: usize,
    pub excluded: usize,
    pub mean: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub jk_residual: f64,
}

impl PathEnsemble {
    /// Brownian increments of one path, regenerated bit-identically.
    pub fn increments(&self, path: usize) -> Vec<Vec<f64>> {
        brownian_increments(self.seed, path as u64, self.steps, self.m, self.dt, self.brownian_substeps)
    }

    pub fn summary(&self) -> EnsembleSummary {
        let kept: Vec<&FlowState> = self.paths.iter().filter(|p| !p.blown_up).map(|p| &p.final_state).collect();
        let count = kept.len().max(1) as f64;
        let coord = |i: usize| kept.iter().map(|s| s.phi[i]).collect::<Vec<f64>>();
        let columns: Vec<Vec<f64>> = (0..self.n).map(coord).collect();
        let (mean, mean_stderr): (Vec<f64>, Vec<f64>) =
            columns.iter().map(|c| crate::stats::mean_stderr(c)).unzip();
        let covariance = (0..self.n)
            .map(|a| {
                (0..self.n)
                    .map(|b| {
                        let prods: Vec<f64> =
                            columns[a].iter().zip(&columns[b]).map(|(x, y)| (x - mean[a]) * (y - mean[b])).collect();
                        crate::stats::pairwise_sum(&prods) / (count - 1.0).max(1.0)
                    })
                    .collect()
            })
            .collect();
        EnsembleSummary {
            retained: kept.len(),
            excluded: self.excluded,
            mean,
            mean_stderr,
            covariance,
            jk_residual: jk_identity_residual(self),
        }
    }

    /// Per-path summary rows: `path,blown_up,max_residual,phi_0..,`.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let phi_cols: Vec<String> = (0..self.n).map(|i| format!("phi_{i}")).collect();
        writeln!(w, "path,blown_up,max_jk_residual,{}", phi_cols.join(","))?;
        for (i, p) in self.paths.iter().enumerate() {
            let phi: Vec<String> = p.final_state.phi.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{i},{},{:.17e},{}", p.blown_up as u8, p.max_residual, phi.join(","))?;
        }
        Ok(())
    }

    /// Little-endian dump: header `n, m, records_per_path, paths, seed` as
    /// `u64`, then per path and record `t, φ, J (row-major), K (row-major)` as `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let per_path = self.paths.first().map(|p| p.records.len().max(1)).unwrap_or(0);
        for h in [self.n as u64, self.m as u64, per_path as u64, self.paths.len() as u64, self.seed] {
            w.write_all(&h.to_le_bytes())?;
        }
        for p in &self.paths {
            let records: Vec<&FlowState> =
                if p.records.is_empty() { vec![&p.final_state] } else { p.records.iter().collect() };
            if records.len() != per_path {
                return Err(Error::InvalidParameter("paths carry different record counts".into()));
            }
            for s in records {
                w.write_all(&s.t.to_le_bytes())?;
                for v in s.phi.iter().chain(s.j.transpose().iter()).chain(s.k.transpose().iter()) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }
}

/// Contents of a binary dump written by [`PathEnsemble::write_binary`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDump {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub paths: Vec<Vec<FlowState>>,
}

pub fn read_binary<R: Read>(mut r: R) -> Result<TrajectoryDump> {
    let mut buf = [0u8; 8];
    let mut header = [0u64; 5];
    for h in header.iter_mut() {
        r.read_exact(&mut buf)?;
        *h = u64::from_le_bytes(buf);
    }
    let [n, m, per_path, n_paths, seed] = header;
    let (n, per_path, n_paths) = (n as usize, per_path as usize, n_paths as usize);
    let mut next = || -> Result<f64> {
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    let mut paths = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let mut states = Vec::with_capacity(per_path);
        for _ in 0..per_path {
            let t = next()?;
            let phi = DVector::from_iterator(n, (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?);
            let j = DMatrix::from_row_iterator(n, n, (0..n * n).map(|_| next()).collect::<Result<Vec<_>>>()?);
            let k = DMatrix::from_row_iterator(n, n, (0..n * n).map(|_| next()).collect::<Result<Vec<_>>>()?);
            states.push(FlowState { t, phi, j, k });
        }
        paths.push(states);
    }
    Ok(TrajectoryDump { n, m: m as usize, seed, paths })
}
