use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum EscError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("not an equilibrium: residual {residual:.3e} exceeds {tolerance:.1e}")]
    NotEquilibrium { residual: f64, tolerance: f64 },

    #[error("configuration invalid: {}", format_issues(.0))]
    Validation(Vec<FieldIssue>),

    #[error("integration fault at t = {time}: {reason}")]
    Fault { time: f64, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// A single offending configuration field.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

impl FieldIssue {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

fn format_issues(issues: &[FieldIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("{}: {}", i.field, i.message))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, EscError>;

pub(crate) fn invalid(msg: impl Into<String>) -> EscError {
    EscError::InvalidInput(msg.into())
}
