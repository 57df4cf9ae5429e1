use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Solver(#[from] otkit::Error),
}

impl CliError {
    /// 3 when a solver ran out of iterations, 2 for every input problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(
                otkit::Error::IterationLimit { .. }
                | otkit::Error::PivotLimit(_)
                | otkit::Error::Diverged
                | otkit::Error::LineSearch(_),
            ) => 3,
            _ => 2,
        }
    }
}
