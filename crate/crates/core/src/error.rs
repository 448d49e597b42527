use thiserror::Error;

#[derive(Debug, Error)]
pub enum JacobError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("solver failure{}: {message}", bs.map(|b| format!(" at BS {b}")).unwrap_or_default())]
    Solver { bs: Option<usize>, message: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl JacobError {
    pub(crate) fn parse(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        JacobError::Parse {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, JacobError>;
