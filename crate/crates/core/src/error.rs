use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The plane passes through the target camera center.
    #[error("degenerate homography for plane {plane} at depth {depth}")]
    DegenerateHomography { plane: usize, depth: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("optimization diverged at iteration {iteration} (loss = {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{}:{line}: {message}", path.display())]
    CameraParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("scene {}: {message}", path.display())]
    Scene { path: PathBuf, message: String },

    #[error("{}: not an IMPI file (bad magic)", path.display())]
    BadMagic { path: PathBuf },

    #[error("{}: unsupported IMPI version {version}", path.display())]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{}: truncated IMPI file (expected {expected} bytes, found {found})", path.display())]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{}: malformed IMPI file: {message}", path.display())]
    MalformedMpi { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
