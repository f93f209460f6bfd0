use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("empty sequence: at least one frame is required")]
    EmptySequence,

    #[error("batch too small: need at least {min} samples, got {got}")]
    BatchTooSmall { min: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("{}", format_parse_errors(.path, .errors))]
    Parse {
        path: PathBuf,
        errors: Vec<ParseIssue>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

/// One rejected line in a manifest or feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseIssue {
    pub line: usize,
    pub message: String,
}

fn format_parse_errors(path: &std::path::Path, errors: &[ParseIssue]) -> String {
    let mut out = format!("{} parse error(s) in {}", errors.len(), path.display());
    for e in errors {
        out.push_str(&format!("\n  line {}: {}", e.line, e.message));
    }
    out
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
