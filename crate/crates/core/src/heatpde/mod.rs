//! Heat equation `∂u/∂t = ½Δu` on flat periodic grids in one or two
//! dimensions, with the log-derivative diagnostics of `f = log u` and
//! closed-form Gaussian solutions on `Rⁿ`.
//!
//! Node `i` along an axis sits at `x_i = −L/2 + i·h`, so for even `N` the
//! origin is a grid node.

mod diagnostics;
mod gaussian;
mod solver;

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use diagnostics::{
    check_identity_g, log_diagnostics, semigroup_domination_check, DiagnosticFields, FtSource,
};
pub use gaussian::{gaussian_oracle, heat_kernel, GaussianKind, GaussianValues};
pub use solver::{heat_semigroup, solve_heat, Scheme, SolveConfig, Trajectory};

/// A flat periodic grid with `N` points per axis and period `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    length: f64,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParameter(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if n < 8 {
            return Err(Error::InvalidParameter(format!("need at least 8 points per axis, got {n}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidParameter(format!("period must be positive, got {length}")));
        }
        Ok(Self { dim, n, length })
    }

    /// Grid with the default period `2π`.
    pub fn periodic(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, 2.0 * PI)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.h()
    }

    /// Per-axis indices of a flat (row-major) node index.
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        if self.dim == 1 {
            [node, 0]
        } else {
            [node / self.n, node % self.n]
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.n + idx[1]
        }
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let idx = self.multi_index(node);
        (0..self.dim).map(|a| self.axis_coord(idx[a])).collect()
    }

    /// Flat index of the node displaced by `offset` along `axis`, wrapping.
    pub fn shift(&self, node: usize, axis: usize, offset: isize) -> usize {
        let mut idx = self.multi_index(node);
        let n = self.n as isize;
        idx[axis] = (idx[axis] as isize + offset).rem_euclid(n) as usize;
        self.flat_index(idx)
    }

    /// Node closest to `x` (after wrapping).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut idx = [0usize; 2];
        for a in 0..self.dim {
            let s = ((x[a] + 0.5 * self.length) / self.h()).round() as isize;
            idx[a] = s.rem_euclid(self.n as isize) as usize;
        }
        self.flat_index(idx)
    }
}

/// Values of a function at every node of a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.values)
    }

    pub fn require_positive(&self, t: f64) -> Result<()> {
        let min = self.min();
        if min > 0.0 {
            Ok(())
        } else {
            Err(Error::PositivityLoss { t, min })
        }
    }

    /// Central difference along `axis`.
    pub fn derivative(&self, axis: usize) -> Vec<f64> {
        let g = &self.grid;
        let inv = 0.5 / g.h();
        (0..g.len())
            .map(|i| (self.values[g.shift(i, axis, 1)] - self.values[g.shift(i, axis, -1)]) * inv)
            .collect()
    }

    /// Three-point second difference along `axis`.
    pub fn second_derivative(&self, axis: usize) -> Vec<f64> {
        let g = &self.grid;
        let inv = 1.0 / (g.h() * g.h());
        (0..g.len())
            .map(|i| {
                (self.values[g.shift(i, axis, 1)] - 2.0 * self.values[i] + self.values[g.shift(i, axis, -1)]) * inv
            })
            .collect()
    }

    /// Mixed central difference `∂²/∂x∂y` (two-dimensional grids only).
    pub fn mixed_derivative(&self) -> Vec<f64> {
        let g = &self.grid;
        let inv = 0.25 / (g.h() * g.h());
        let at = |i: usize, a: isize, b: isize| self.values[g.shift(g.shift(i, 0, a), 1, b)];
        (0..g.len()).map(|i| (at(i, 1, 1) - at(i, 1, -1) - at(i, -1, 1) + at(i, -1, -1)) * inv).collect()
    }

    pub fn laplacian(&self) -> Vec<f64> {
        let mut out = self.second_derivative(0);
        for axis in 1..self.grid.dim {
            for (o, v) in out.iter_mut().zip(self.second_derivative(axis)) {
                *o += v;
            }
        }
        out
    }

    /// Periodic multilinear interpolation at an arbitrary point.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        let g = &self.grid;
        if x.len() != g.dim {
            return Err(Error::DimensionMismatch { expected: g.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interpolation point".into()));
        }
        let n = g.n as f64;
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..g.dim {
            let s = ((x[a] + 0.5 * g.length) / g.h()).rem_euclid(n);
            let fl = s.floor();
            base[a] = (fl as usize) % g.n;
            frac[a] = s - fl;
        }
        let node = g.flat_index(base);
        Ok(if g.dim == 1 {
            let v0 = self.values[node];
            let v1 = self.values[g.shift(node, 0, 1)];
            v0 + frac[0] * (v1 - v0)
        } else {
            let v00 = self.values[node];
            let v10 = self.values[g.shift(node, 0, 1)];
            let v01 = self.values[g.shift(node, 1, 1)];
            let v11 = self.values[g.shift(g.shift(node, 0, 1), 1, 1)];
            let (fx, fy) = (frac[0], frac[1]);
            (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11)
        })
    }

    /// `node,value` lines with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "node,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i},{v:.17e}")?;
        }
        Ok(())
    }

    pub fn summary(&self, t: f64) -> FieldSummary {
        FieldSummary {
            t,
            dim: self.grid.dim,
            points_per_axis: self.grid.n,
            period: self.grid.length,
            min: self.min(),
            max: self.max(),
            mean: self.mean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub t: f64,
    pub dim: usize,
    pub points_per_axis: usize,
    pub period: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// One Fourier term `cos_coef·cos(k·x) + sin_coef·sin(k·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub k: Vec<i32>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Named initial-data families. Sums over axes are used in two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant { value: f64 },
    /// `offset + a·Σ cos xᵢ`.
    Cosine { a: f64, #[serde(default = "one")] offset: f64 },
    /// `exp(a·Σ cos xᵢ)`.
    ExpCosine { a: f64 },
    /// `offset + Σ terms`.
    TrigPoly { #[serde(default)] offset: f64, terms: Vec<TrigTerm> },
    /// Periodic sum of the centred Gaussian density with variance `σ²` per axis.
    WrappedGaussian { sigma2: f64 },
}

fn one() -> f64 {
    1.0
}

/// Wrapped Gaussian density on a circle of period `length`.
pub fn wrapped_gaussian_1d(x: f64, sigma2: f64, length: f64) -> f64 {
    let images = ((8.0 * sigma2.sqrt()) / length).ceil() as i64 + 1;
    let norm = (2.0 * PI * sigma2).sqrt();
    (-images..=images)
        .map(|k| {
            let y = x + k as f64 * length;
            (-y * y / (2.0 * sigma2)).exp()
        })
        .sum::<f64>()
        / norm
}

impl InitialData {
    pub fn evaluate(&self, x: &[f64], length: f64) -> f64 {
        match self {
            InitialData::Constant { value } => *value,
            InitialData::Cosine { a, offset } => offset + a * x.iter().map(|v| v.cos()).sum::<f64>(),
            InitialData::ExpCosine { a } => (a * x.iter().map(|v| v.cos()).sum::<f64>()).exp(),
            InitialData::TrigPoly { offset, terms } => {
                offset
                    + terms
                        .iter()
                        .map(|term| {
                            let phase: f64 = term.k.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
                            term.cos * phase.cos() + term.sin * phase.sin()
                        })
                        .sum::<f64>()
            }
            InitialData::WrappedGaussian { sigma2 } => {
                x.iter().map(|&xi| wrapped_gaussian_1d(xi, *sigma2, length)).product()
            }
        }
    }

    pub fn sample(&self, grid: TorusGrid) -> Result<ScalarField> {
        match self {
            InitialData::WrappedGaussian { sigma2 } if *sigma2 <= 0.0 => {
                return Err(Error::InvalidParameter("wrapped gaussian needs sigma2 > 0".into()))
            }
            InitialData::TrigPoly { terms, .. } if terms.iter().any(|t| t.k.len() != grid.dim()) => {
                return Err(Error::InvalidParameter("trig term wave vector has wrong dimension".into()))
            }
            _ => {}
        }
        ScalarField::from_fn(grid, |x| self.evaluate(x, grid.length()))
    }

    /// A seeded random trigonometric polynomial with wave numbers up to `kmax`
    /// and coefficients of size at most `amplitude`.
    pub fn random_trig_poly(dim: usize, terms: usize, kmax: i32, amplitude: f64, seed: u64) -> Self {
        use rand::Rng;
        let mut r = rng::stream(rng::mix_seed(seed, 0x7419), 0);
        let terms = (0..terms)
            .map(|_| TrigTerm {
                k: (0..dim).map(|_| r.random_range(-kmax..=kmax)).collect(),
                cos: amplitude * (2.0 * r.random::<f64>() - 1.0),
                sin: amplitude * (2.0 * r.random::<f64>() - 1.0),
            })
            .collect();
        InitialData::TrigPoly { offset: 0.0, terms }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_invariants() {
        assert!(TorusGrid::periodic(1, 7).is_err());
        assert!(TorusGrid::periodic(3, 16).is_err());
        let g = TorusGrid::periodic(2, 8).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.shift(0, 0, -1), 56);
        assert_eq!(g.shift(7, 1, 1), 0);
        assert_eq!(g.nearest_node(&[0.0, 0.0]), g.flat_index([4, 4]));
        assert_eq!(g.coords(g.flat_index([4, 4])), vec![0.0, 0.0]);
    }

    #[test]
    fn interpolation_is_exact_at_nodes_and_periodic() {
        let g = TorusGrid::periodic(2, 16).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0].sin() + 2.0 * x[1].cos()).unwrap();
        for node in [0, 17, 100, 255] {
            let x = g.coords(node);
            assert!((f.interpolate(&x).unwrap() - f.values[node]).abs() < 1e-12);
            let shifted = [x[0] + g.length(), x[1] - 3.0 * g.length()];
            assert!((f.interpolate(&shifted).unwrap() - f.values[node]).abs() < 1e-9);
        }
    }

    #[test]
    fn central_differences_second_order() {
        let err = |n: usize| {
            let g = TorusGrid::periodic(1, n).unwrap();
            let f = ScalarField::from_fn(g, |x| x[0].sin()).unwrap();
            let d = f.derivative(0);
            (0..n).map(|i| (d[i] - g.coords(i)[0].cos()).abs()).fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!((3.8..4.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn initial_families() {
        let g = TorusGrid::periodic(1, 64).unwrap();
        let wg = InitialData::WrappedGaussian { sigma2: 0.25 }.sample(g).unwrap();
        // integrates to one over a period
        let mass: f64 = wg.values.iter().sum::<f64>() * g.h();
        assert!((mass - 1.0).abs() < 1e-12);
        let tp = InitialData::random_trig_poly(2, 4, 3, 0.5, 9);
        assert_eq!(tp, InitialData::random_trig_poly(2, 4, 3, 0.5, 9));
        assert!(tp.sample(g).is_err());
        let parsed: InitialData = serde_json::from_str(r#"{"family":"cosine","a":0.5}"#).unwrap();
        assert_eq!(parsed.evaluate(&[0.0], 1.0), 1.5);
    }
}
