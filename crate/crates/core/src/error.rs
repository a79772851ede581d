use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    /// Device the violation belongs to, `None` for global fields.
    pub device: Option<usize>,
    pub field: String,
    pub message: String,
}

impl ConfigViolation {
    pub fn global(field: &str, message: impl Into<String>) -> Self {
        Self { device: None, field: field.to_string(), message: message.into() }
    }

    pub fn device(index: usize, field: &str, message: impl Into<String>) -> Self {
        Self { device: Some(index), field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.device {
            Some(k) => write!(f, "device {k}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration:\n{}", format_violations(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("channel draw for device {device} stayed below the fade floor after {attempts} attempts")]
    DeepFade { device: usize, attempts: u32 },

    #[error("exact enumeration over {devices} devices is too large (max {max}); use the Monte-Carlo estimator")]
    EnumerationTooLarge { devices: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target epsilon {target} is unreachable: {reason}")]
    Unreachable { target: f64, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}

fn format_violations(v: &[ConfigViolation]) -> String {
    v.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n")
}
