use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("channel vector g[{bs}][{plant}] has zero norm")]
    ZeroChannel { bs: usize, plant: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid convex program: {0}")]
    Program(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("subproblem infeasible at atom `{constraint}`: {detail}")]
    Infeasible { constraint: String, detail: String },

    #[error("experiment spec error: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
