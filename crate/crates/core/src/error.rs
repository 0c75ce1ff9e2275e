use std::io;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by who is at fault: `Shape`/`Argument` are contract
/// violations by a caller, `Config`/`Weight` are validation failures of model
/// description files, and `Input`/`Parse`/`Io` come from reading user data.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("weight error: {0}")]
    Weight(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn weight(msg: impl Into<String>) -> Self {
        Error::Weight(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = the user's input files are malformed, 3 = the model description
    /// (config or weights) failed validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Parse { .. } | Error::Io { .. } => 2,
            Error::Config(_) | Error::Weight(_) | Error::Shape(_) | Error::Argument(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
