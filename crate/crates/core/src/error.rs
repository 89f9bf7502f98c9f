use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid resolution: {0}")]
    InvalidResolution(String),

    #[error("point is not on the manifold (|p| = {norm}, radius = {radius})")]
    PointNotOnManifold { norm: f64, radius: f64 },

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("invalid time order: s = {s}, t = {t}")]
    InvalidTimeOrder { s: f64, t: f64 },

    #[error(
        "kernel under-resolved on [{s}, {t}]: width {width:.3e} < 3 x node spacing {spacing:.3e}"
    )]
    KernelUnderResolved {
        s: f64,
        t: f64,
        width: f64,
        spacing: f64,
    },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("operation requires a scalar scaling c(t)·I")]
    UnsupportedScaling,

    #[error("ill-conditioned fit (condition number {0:.3e})")]
    IllConditionedFit(f64),

    #[error("shell half-width {eps} must be below r/2 = {limit}")]
    ShellTooThick { eps: f64, limit: f64 },

    #[error("time {0} is not a partition point")]
    TimesNotInPartition(f64),

    #[error("invalid scaling: {0}")]
    InvalidScaling(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
