use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("quadrature grid [{z_min}, {z_max}] does not cover the support [{need_min}, {need_max}]")]
    GridTooNarrow {
        z_min: f64,
        z_max: f64,
        need_min: f64,
        need_max: f64,
    },

    #[error("posterior lost all mass at t={t}; the grid is too narrow")]
    AllMassLost { t: usize },

    #[error(
        "dataset generation exhausted {attempts} attempts with bins filled {filled:?} of {per_bin} each"
    )]
    ExhaustedAttempts {
        attempts: u64,
        per_bin: usize,
        filled: [usize; 3],
        max_dd_seen: Option<usize>,
    },

    #[error("no usable trajectories for bin {bin} (metric {metric}, method {method})")]
    EmptyBin {
        bin: String,
        metric: String,
        method: String,
    },

    #[error("output path {0} already exists (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParams(_) | Error::Config(_) | Error::GridTooNarrow { .. }
        )
    }
}
