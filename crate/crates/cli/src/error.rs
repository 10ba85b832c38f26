use thiserror::Error;

/// Exit status for bad configs and inputs the solvers refuse.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{context}: {source}")]
    Core {
        context: &'static str,
        #[source]
        source: expertgame::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Serialize(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl CliError {
    pub fn core(context: &'static str) -> impl FnOnce(expertgame::Error) -> CliError {
        move |source| CliError::Core { context, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } if !source.is_validation() => EXIT_NUMERICAL,
            CliError::Serialize(_) | CliError::ThreadPool(_) => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }
}
