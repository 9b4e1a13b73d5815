use thiserror::Error;

/// Errors surfaced by the solver layers.
///
/// Each variant maps to a process exit code so scripted runs can branch on
/// the failure class: condition violations exit 2, bracket failures exit 3,
/// numerical failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// One of the five model conditions failed during landscape analysis.
    #[error("condition {condition} violated: {detail}")]
    ConditionViolation { condition: u8, detail: String },

    /// A speed search could not establish opposite-classification witnesses.
    #[error("bracket failure in {context}: {detail}")]
    BracketFailure { context: String, detail: String },

    /// Integration or root refinement broke down.
    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    /// Config file or flag validation failed.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn condition(condition: u8, detail: impl Into<String>) -> Self {
        Error::ConditionViolation {
            condition,
            detail: detail.into(),
        }
    }

    pub fn bracket(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::BracketFailure {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI: 2 condition violation, 3 bracket
    /// failure, 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConditionViolation { .. } | Error::Config(_) => 2,
            Error::BracketFailure { .. } => 3,
            Error::Numerical { .. } => 4,
            Error::Io(_) => 1,
        }
    }

    /// Machine-readable form for error reporting on the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self {
            Error::ConditionViolation { .. } => "condition_violation",
            Error::BracketFailure { .. } => "bracket_failure",
            Error::Numerical { .. } => "numerical_failure",
            Error::Config(_) => "config_error",
            Error::Io(_) => "io_error",
        };
        serde_json::json!({
            "error": kind,
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
    }
}
