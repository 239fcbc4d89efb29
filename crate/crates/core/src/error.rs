//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the simulator core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("invalid dimensions for {what}: rows={rows}, cols={cols}")]
    InvalidDimensions {
        what: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: String },

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("insufficient data for {what}: need {needed}, have {available}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("class {class} has only {available} training samples, {shots} shots requested")]
    InsufficientShots {
        class: usize,
        available: usize,
        shots: usize,
    },

    #[error(
        "no non-empty Dirichlet partition found after {attempts} attempts \
         (beta={beta}, clients={clients}, samples={samples})"
    )]
    PartitionInfeasible {
        beta: f64,
        clients: usize,
        samples: usize,
        attempts: usize,
    },

    #[error("sampled cohort is empty (clients={clients}, sample_ratio={sample_ratio})")]
    EmptyCohort { clients: usize, sample_ratio: f64 },

    #[error("protocol error: {message}")]
    Protocol { message: String },

    #[error("non-finite loss at round {round}, client {client}")]
    Divergence { round: u64, client: usize },

    #[error("mode error: {message}")]
    Mode { message: String },

    #[error("state error: {message}")]
    State { message: String },

    #[error("checkpoint error: {message}")]
    Checkpoint { message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-parsable category code, used by the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidDimensions { .. } => "shape",
            Error::NonFinite { .. } => "numeric",
            Error::InvalidParameter { .. } => "param",
            Error::LabelOutOfRange { .. } => "label",
            Error::Parse { .. } => "parse",
            Error::InsufficientData { .. } | Error::InsufficientShots { .. } => "data",
            Error::PartitionInfeasible { .. } => "partition",
            Error::EmptyCohort { .. } => "cohort",
            Error::Protocol { .. } => "protocol",
            Error::Divergence { .. } => "divergence",
            Error::Mode { .. } => "mode",
            Error::State { .. } => "state",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
