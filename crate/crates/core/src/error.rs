use std::path::PathBuf;

use crate::solver::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("mesh functions belong to different meshes")]
    MeshMismatch,

    #[error("{dofs} interior unknowns exceed the dense capacity of {cap}")]
    Capacity { dofs: usize, cap: usize },

    #[error("unknown solution `{0}`")]
    UnknownSolution(String),

    #[error(
        "{method} did not converge: relative residual {:.3e} after {} iterations",
        .report.relative_residual,
        .report.iterations
    )]
    NotConverged {
        method: &'static str,
        report: Box<SolveReport>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn mesh(msg: impl Into<String>) -> Self {
        Error::InvalidMesh(msg.into())
    }
}
