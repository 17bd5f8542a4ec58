use thiserror::Error;

/// Errors produced by model construction, solvers and trackers.
#[derive(Debug, Error)]
pub enum HbError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("singular linear system in {context}")]
    Singular { context: &'static str },

    #[error("non-finite nonlinear force at dof {dof} (sample {sample})")]
    NonFiniteForce { dof: usize, sample: usize },

    #[error("corrector failed after {iterations} iterations (|h| = {residual:.3e})")]
    CorrectorFailed { iterations: usize, residual: f64 },

    #[error("continuation step size underflow at omega = {omega:.6e} (h = {step:.3e})")]
    StepUnderflow { omega: f64, step: f64 },

    #[error("eigenvalue solver failed: {0}")]
    Eigen(String),

    #[error("no sign change of {test} over the bracket [{a:.6e}, {b:.6e}]")]
    NoSignChange { test: &'static str, a: f64, b: f64 },

    #[error("root localization did not converge in {iterations} iterations")]
    RootNotLocated { iterations: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("time integration failed: {0}")]
    Integration(String),

    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, HbError>;
