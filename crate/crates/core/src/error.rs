use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field index {index} out of range (allowed {min}..={max})")]
    IndexOutOfRange { index: usize, min: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("derivative evaluation failed: {0}")]
    Derivative(String),

    #[error("quadratic form is denominator-degenerate at every sample (unconstrained LHS minimum {lhs_min:.6e})")]
    DenominatorDegenerate { lhs_min: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("explicit scheme unstable: dt = {dt:.3e} exceeds limit {limit:.3e}")]
    Unstable { dt: f64, limit: f64 },

    #[error("positivity lost at t = {t:.6} (min value {min:.3e})")]
    PositivityLoss { t: f64, min: f64 },

    #[error("linear solver did not converge (residual {residual:.3e} after {iterations} iterations)")]
    SolverDivergence { residual: f64, iterations: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("blow-up exclusions {excluded}/{total} exceed the allowed fraction")]
    TooManyExclusions { excluded: usize, total: usize },

    #[error("weight degeneracy: effective sample size {ess:.1} below {threshold:.1}")]
    WeightDegeneracy { ess: f64, threshold: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("bound is outside its domain: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
