use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] scoreq_core::Error),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("missing required setting {0} (flag or config file)")]
    Missing(&'static str),
    #[error("refusing to overwrite {0}; pass --force")]
    Exists(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("{count} problem(s) in {what}", count = .issues.len())]
    Input { what: String, issues: Vec<String> },
}

pub type Result<T> = std::result::Result<T, CliError>;

/// The JSON object written to stderr on failure.
#[derive(Serialize)]
struct ErrorRecord<'a> {
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    details: Vec<String>,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        use scoreq_core::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Dimension { .. } => "dimension",
                E::EmptySequence => "empty_sequence",
                E::BatchTooSmall { .. } => "batch_too_small",
                E::NonFinite(_) => "non_finite",
                E::Config(_) => "config",
                E::UndefinedCorrelation(_) => "undefined_correlation",
                E::Parse { .. } => "parse",
                E::Io { .. } => "io",
                E::Serde(_) => "serde",
                E::Evaluation(_) => "evaluation",
            },
            CliError::Config { .. } | CliError::Missing(_) => "config",
            CliError::Exists(_) => "exists",
            CliError::Usage(_) => "usage",
            CliError::Input { .. } => "input",
        }
    }

    /// 2 for configuration and usage problems, 3 for bad input data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" | "exists" | "usage" => 2,
            "parse" | "input" | "dimension" => 3,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let details = match self {
            CliError::Input { issues, .. } => issues.clone(),
            CliError::Core(scoreq_core::Error::Parse { errors, .. }) => {
                errors.iter().map(|i| format!("line {}: {}", i.line, i.message)).collect()
            }
            _ => Vec::new(),
        };
        let record = ErrorRecord {
            kind: self.kind(),
            message: self.to_string(),
            details,
        };
        serde_json::json!({ "error": record }).to_string()
    }
}
