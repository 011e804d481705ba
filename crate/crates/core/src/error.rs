use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
///
/// Variants map onto the process exit-status taxonomy used by the CLI:
/// usage-type problems (`Budget`, `Config`), data problems (`Io`, `Format`,
/// `Invariant`, `ShapeMismatch`, `MissingBaseline`, `EmptyInput`) and
/// numerical problems (`DegenerateData`, `NumericalFailure`).
#[derive(Debug, Error)]
pub enum NaitError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error{}: {message}", record_suffix(*.record))]
    Format {
        record: Option<usize>,
        message: String,
    },

    #[error("invariant violated ({subject}): {message}")]
    Invariant { subject: String, message: String },

    #[error("degenerate data{}: {message}", layer_suffix(*.layer))]
    DegenerateData {
        layer: Option<usize>,
        message: String,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("budget error: {0}")]
    Budget(String),

    #[error("missing baseline: task {0:?} has no matching capability row")]
    MissingBaseline(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("config error: {0}")]
    Config(String),
}

fn record_suffix(record: Option<usize>) -> String {
    match record {
        Some(i) => format!(" in record {i}"),
        None => String::new(),
    }
}

fn layer_suffix(layer: Option<usize>) -> String {
    match layer {
        Some(l) => format!(" in layer {l}"),
        None => String::new(),
    }
}

impl NaitError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NaitError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(record: Option<usize>, message: impl Into<String>) -> Self {
        NaitError::Format {
            record,
            message: message.into(),
        }
    }

    pub(crate) fn invariant(subject: impl Into<String>, message: impl Into<String>) -> Self {
        NaitError::Invariant {
            subject: subject.into(),
            message: message.into(),
        }
    }

    pub(crate) fn degenerate(layer: Option<usize>, message: impl Into<String>) -> Self {
        NaitError::DegenerateData {
            layer,
            message: message.into(),
        }
    }

    /// Attach a layer index to a `DegenerateData` error that lacks one.
    pub(crate) fn in_layer(self, l: usize) -> Self {
        match self {
            NaitError::DegenerateData { layer: None, message } => NaitError::DegenerateData {
                layer: Some(l),
                message,
            },
            NaitError::NumericalFailure(m) => NaitError::NumericalFailure(format!("layer {l}: {m}")),
            other => other,
        }
    }
}

pub type Result<T, E = NaitError> = std::result::Result<T, E>;
