use std::io;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The file is not a bank this engine can read (magic, version, header bytes).
    #[error("format error: {0}")]
    Format(String),
    /// Input data violates an invariant; the message names the offending index.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    /// Illegal state transition, e.g. writing an accuracy cell twice.
    #[error("state error: {0}")]
    State(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// Training diverged (non-finite loss or parameters).
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: usize) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code: 1 for config/validation problems, 2 for numeric or runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Format(_) | Error::Validation(_) | Error::Schedule(_) | Error::Config(_) => 1,
            Error::State(_) | Error::UndefinedMetric(_) | Error::Numeric(_) | Error::Io { .. } => 2,
            Error::Stage { .. } => unreachable!("root() strips stage context"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
