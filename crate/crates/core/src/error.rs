use thiserror::Error;

use crate::sparse::SolverError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate tetrahedron {tet}: volume {volume:e}")]
    DegenerateElement { tet: usize, volume: f64 },

    #[error("malformed mesh: {0}")]
    Mesh(String),

    #[error(transparent)]
    Solver(#[from] SolverError),

    /// The extrapolated magnetization vanished at a node, so its tangent
    /// plane is undefined.
    #[error("degenerate extrapolated magnetization at node {node} (|m| = {norm:e})")]
    DegenerateExtrapolation { node: usize, norm: f64 },

    #[error("cannot project zero vector at node {node} (|m| = {norm:e})")]
    ZeroProjection { node: usize, norm: f64 },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    /// A simulation inside an experiment ended with a failure.
    #[error("run {label} failed: {reason}")]
    RunFailed { label: String, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
