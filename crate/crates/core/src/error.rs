use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised by the numerical routines.
///
/// Errors fall in two families: parameter validation (bad input, caught
/// before any numerics run) and numerical failure (the computation itself
/// could not deliver a result at the requested accuracy). The CLI maps the
/// first family to exit code 1 and the second to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Validation { name: &'static str, reason: String },

    #[error("operator is not positive definite (smallest eigenvalue {smallest_eigenvalue:e})")]
    NotPositiveDefinite { smallest_eigenvalue: f64 },

    #[error("positive-definiteness guard violated: mu + min(spectrum) = {margin:e} <= 0")]
    GuardViolation { margin: f64 },

    #[error(
        "quadrature did not converge: value {value:e}, estimated error {error:e} after {evaluations} evaluations"
    )]
    Quadrature {
        value: f64,
        error: f64,
        evaluations: usize,
    },

    #[error(
        "gap equation not bracketed for lambda = {lambda}: achievable window is ({lambda_min:e}, {lambda_max:e})"
    )]
    GapRange {
        lambda: f64,
        lambda_min: f64,
        lambda_max: f64,
    },

    #[error("gap equation did not converge: residual {residual:e} after {iterations} iterations")]
    GapConvergence { residual: f64, iterations: usize },

    #[error(
        "insufficient decorrelation: {effective:.1} effective measurements (need {required}), tau_int = {tau_int:.2}"
    )]
    Decorrelation {
        effective: f64,
        required: f64,
        tau_int: f64,
    },

    #[error("correlator non-positive inside fit window at r = {r}: C = {value:e}")]
    FitWindow { r: usize, value: f64 },

    #[error("no effective-mass plateau between r = {r_min} and {r_max}: best fit p-value {best_p_value:.3}")]
    NoPlateau {
        r_min: usize,
        r_max: usize,
        best_p_value: f64,
    },

    #[error("tail bound {bound:e} exceeds tolerance {tolerance:e}; truncation radius must be at least {required_radius:e}")]
    TailBound {
        bound: f64,
        tolerance: f64,
        required_radius: f64,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            name,
            reason: reason.into(),
        }
    }

    /// True for input-validation failures, false for numerical ones.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation { .. } | Error::GuardViolation { .. })
    }
}
