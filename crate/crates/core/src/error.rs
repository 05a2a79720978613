use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate quadratic form: {0}")]
    DegenerateForm(String),

    #[error("energy density has no center: {0}")]
    NoCenter(String),

    #[error("phase-field update diverged at step {step}")]
    Divergence { step: usize },

    #[error("no iso-surface crossing in field")]
    EmptySurface,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("scaler component {component} is degenerate (max == min)")]
    DegenerateComponent { component: usize },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("incompatible encoding: {0}")]
    IncompatibleEncoding(String),

    #[error("cone angles admit no wave directions")]
    EmptySupport,

    #[error("voxel image is constant")]
    DegenerateImage,

    #[error("feasibility rate {rate:.4} below threshold over the last {window} samples")]
    FeasibilityAbort { rate: f64, window: usize },

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 invalid input, 3 numerical divergence,
    /// 4 incompatible artifacts, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::IncompatibleEncoding(_) | Error::MissingArtifact(_) => 4,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}

/// Opens an input file, reporting absence as [`Error::MissingArtifact`].
pub(crate) fn open_artifact(path: &std::path::Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })
}
