use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: {reason}")]
    Truncated { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest schema violation at `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image too small: {width}x{height}, need at least {min} px per side")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate point configuration: {0}")]
    Degenerate(String),

    #[error("no affine model reached 3 inliers")]
    NoConsensus,

    #[error("transform is not invertible (det = {0})")]
    NotInvertible(f64),

    #[error("region ({x}, {y}) of size {size} lies outside the {width}x{height} reference")]
    RegionOutOfBounds { x: usize, y: usize, size: usize, width: usize, height: usize },

    #[error("missing transform for scanner {0}")]
    MissingTransform(String),

    #[error("sample {sample} has no patch for scanner {scanner}")]
    MissingPatch { sample: String, scanner: String },

    #[error("sample {0} carries no ground-truth label")]
    MissingLabel(String),

    #[error("degenerate groups: {0}")]
    DegenerateGroups(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("malformed data file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema { field: field.into(), reason: reason.into() }
    }
}
