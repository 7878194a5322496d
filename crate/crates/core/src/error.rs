use std::path::PathBuf;

/// Failure categories surfaced by the library. The CLI maps each category to
/// a distinct exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Format {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("unresolved image ids: {}", .0.join(", "))]
    Link(Vec<String>),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("model family mismatch: {0}")]
    Family(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse grouping used for exit codes and the one-line error category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
    Other,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Data => "data",
            Category::Numeric => "numeric",
            Category::Other => "other",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Numeric => 4,
            Category::Other => 1,
        }
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Config,
            Error::Format { .. } | Error::Link(_) => Category::Data,
            Error::Numeric(_) => Category::Numeric,
            Error::Argument(_) | Error::Contract(_) | Error::Family(_) | Error::Io { .. } => {
                Category::Other
            }
        }
    }

    /// The message without the prefix that repeats the category name.
    pub fn detail(&self) -> String {
        match self {
            Error::Config(m) | Error::Numeric(m) => m.clone(),
            other => other.to_string(),
        }
    }

    pub(crate) fn format(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
