//! Numerical verification engine for gradient estimates of positive heat
//! equation solutions.
//!
//! The crate is organised around five subsystems:
//!
//! * [`fields`] – vector-field calculus: Lie brackets, the curvature proxy
//!   `R_α`, estimation of the structure constants `C₁`, `C₂` and a Frobenius
//!   integrability probe.
//! * [`heatpde`] – a finite-difference heat solver on flat periodic grids
//!   together with the log-derivative diagnostics (`|∇f|²`, `G = −Δf`, …)
//!   and closed-form Gaussian solutions on `Rⁿ`.
//! * [`bounds`] – closed-form evaluators of every gradient, Li-Yau and
//!   Harnack bound plus a generic bound-vs-observation checker.
//! * [`flow`] – Euler–Maruyama / Milstein simulation of stochastic flows
//!   with their Jacobian `J` and independently evolved inverse `K`.
//! * [`bsde`] – the quadratic BSDE with driver `−½|z|²`: entropic oracle,
//!   Monte Carlo path functionals, Girsanov weights, BMO and submartingale
//!   diagnostics.

pub mod bounds;
pub mod bsde;
pub mod error;
pub mod fields;
pub mod flow;
pub mod heatpde;
pub mod rng;
pub mod stats;

pub use bounds::{CheckResult, Curvature};
pub use error::{Error, Result};
pub use stats::MCEstimate;
