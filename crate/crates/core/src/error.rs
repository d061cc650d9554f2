use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid band {name} [{low_hz}, {high_hz}) Hz at sample rate {sample_rate_hz} Hz: {reason}")]
    InvalidBand {
        name: String,
        low_hz: f64,
        high_hz: f64,
        sample_rate_hz: f64,
        reason: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("channel {channel} has zero variance in epoch {epoch}")]
    DegenerateChannel { channel: usize, epoch: usize },

    #[error("pooled variance is zero")]
    DegenerateVariance,

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{entity}: {source}")]
    Context {
        entity: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Names the band, participant or file the error concerns.
    pub fn context(self, entity: impl Into<String>) -> Self {
        Error::Context {
            entity: entity.into(),
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Short machine-readable kind, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InvalidBand { .. } => "invalid_band",
            Error::Validation(_) => "validation",
            Error::Shape(_) => "shape_mismatch",
            Error::DegenerateChannel { .. } => "degenerate_channel",
            Error::DegenerateVariance => "degenerate_variance",
            Error::SolverFailure { .. } => "solver_failure",
            Error::Window { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Context { source, .. } | Error::Stage { source, .. } => source.kind(),
        }
    }

    /// Name of the pipeline stage the error was raised in, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            Error::Context { source, .. } => source.stage(),
            _ => None,
        }
    }
}
