use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("Euler-rate singularity: pitch {theta} rad is within {margin} rad of +/-pi/2")]
    Singularity { theta: f64, margin: f64 },

    #[error("no feasible equilibrium: {0}")]
    Infeasible(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("LQR synthesis failed: {reason} (eigenvalue {re:+e}{im:+e}i)")]
    Synthesis { reason: String, re: f64, im: f64 },

    #[error("tilt compensation undefined for roll {phi} rad, pitch {theta} rad")]
    TiltDomain { phi: f64, theta: f64 },

    #[error("desired-axis demand has zero magnitude")]
    DegenerateDemand,

    #[error("insufficient data: need {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("inconsistent measurement: {0}")]
    InconsistentMeasurement(String),
}

pub type Result<T> = std::result::Result<T, Error>;
