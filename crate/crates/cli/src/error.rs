use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: resunit::Error,
    },

    #[error("solver: {0}")]
    Solver(#[source] resunit::Error),

    #[error("evaluation: {0}")]
    Eval(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: impl Into<resunit::Error>) -> CliError {
        CliError::Io {
            path: path.into(),
            source: source.into(),
        }
    }

    /// Argument problems surfacing from the library are config errors.
    pub fn from_lib(e: resunit::Error) -> CliError {
        match e.root() {
            resunit::Error::InvalidParameter(_)
            | resunit::Error::Parse(_)
            | resunit::Error::DimensionMismatch(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(e),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Solver(_) => 4,
            CliError::Eval(_) => 5,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Solver(_) => "solver",
            CliError::Eval(_) => "evaluation",
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            code: i32,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            path: Option<String>,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        let path = match self {
            CliError::Io { path, .. } => Some(path.display().to_string()),
            _ => None,
        };
        serde_json::to_string(&Wrapper {
            error: Body {
                kind: self.kind(),
                code: self.exit_code(),
                message: self.to_string(),
                path,
            },
        })
        .expect("error body serializes")
    }
}

pub type CliResult<T> = Result<T, CliError>;
