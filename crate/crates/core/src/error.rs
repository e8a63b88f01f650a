use thiserror::Error;

/// Errors raised by the model primitives, the replica solver and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("NaN encountered in {0}")]
    NotANumber(&'static str),

    #[error("empty dataset: n_dim = {n_dim}, alpha = {alpha} gives no samples")]
    EmptyDataset { n_dim: usize, alpha: f64 },

    #[error("degenerate classifier: q = {0} must be positive")]
    DegenerateClassifier(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "proximal solve did not converge (y = {y}, omega = {omega}, v_scale = {v_scale}, residual = {residual:e})"
    )]
    ProxNonConvergence {
        y: f64,
        omega: f64,
        v_scale: f64,
        residual: f64,
    },

    #[error("fixed point did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        trajectory: Vec<f64>,
    },

    #[error("order parameters diverged at iteration {iterations} (q = {q:e})")]
    Divergence { iterations: usize, q: f64 },

    #[error("bias equation has no root in [{lo}, {hi}]")]
    BiasBracket { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
