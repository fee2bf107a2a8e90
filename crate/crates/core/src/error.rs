//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by world generation, training, and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field failed validation. Carries the field name.
    #[error("invalid configuration: field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    /// Lookup of an unknown concept, head, or checkpoint entry.
    #[error("lookup failed: {0}")]
    Lookup(String),

    /// Two values that must agree (metric tags, head sizes, slot counts) do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// An operation received an empty input it cannot work with.
    #[error("empty input: {0}")]
    Empty(String),

    /// Dataset stratification could not place enough concepts per decile.
    #[error("stratification failed: {0}")]
    Stratification(String),

    /// Rebalancing requires both familiar and unfamiliar examples.
    #[error("rebalance failed: {0}")]
    Rebalance(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    /// Brute-force hedge grid would exceed the point budget.
    #[error("grid too large: {points} points exceeds limit {limit}")]
    GridTooLarge { points: u64, limit: u64 },

    /// A persisted file has a bad magic, version, or layout.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// Experiment config text failed to parse.
    #[error("config parse error at line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },

    /// Pipeline stage failure, wrapping the stage name for the operator.
    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an I/O error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Tag an error with the pipeline stage it aborted.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Process exit code for the CLI: 2 for config errors, 3 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConfigParse { .. } => 2,
            Error::Training { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
