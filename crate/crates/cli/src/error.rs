use std::path::PathBuf;

use gazesal_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Context {
        path: PathBuf,
        #[source]
        source: CoreError,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Io { .. } | CoreError::Stream(_) | CoreError::Image(_) => EXIT_IO,
        CoreError::Shape(_) => EXIT_INTERNAL,
        _ => EXIT_VALIDATION,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) | CliError::Context { source: e, .. } => core_code(e),
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Invariant(_) => EXIT_INTERNAL,
        }
    }

    pub fn at(path: impl Into<PathBuf>, source: CoreError) -> Self {
        CliError::Context {
            path: path.into(),
            source,
        }
    }
}

/// Attaches a file path to core errors.
pub trait WithPath<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T>;
}

impl<T> WithPath<T> for gazesal_core::Result<T> {
    fn at(self, path: &std::path::Path) -> CliResult<T> {
        self.map_err(|e| CliError::at(path, e))
    }
}
