use std::path::PathBuf;

/// Errors produced by the registration and mosaicing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed image header: {0}")]
    MalformedHeader(String),
    #[error("truncated image payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("degenerate dimensions {width}x{height}")]
    DegenerateDimensions { width: usize, height: usize },
    #[error("invalid motion parameters: {0}")]
    InvalidParams(String),
    #[error("singular linear part (det = {det:e})")]
    Singular { det: f64 },
    #[error("model kind mismatch")]
    KindMismatch,
    #[error("rescale factor must be positive, got {0}")]
    NonPositiveFactor(f64),
    #[error("insufficient overlap: {found} pixels, {required} required")]
    InsufficientOverlap { found: usize, required: usize },
    #[error("normal equations are not solvable (non-finite or singular)")]
    NonFiniteSystem,
    #[error("registration failed: {0}")]
    RegistrationFailure(String),
    #[error("frame {frame} observes no pixel of the reference grid")]
    EmptyRegion { frame: usize },
    #[error("frame {frame} is the gauge anchor and cannot be updated")]
    AnchorUpdate { frame: usize },
    #[error("sequential registration of frames {index} and {} failed: {source}", index + 1)]
    SequentialInit {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid registration: {0}")]
    InvalidRegistration(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("frame {frame} exits the source image bounds")]
    SourceBounds { frame: usize },
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
