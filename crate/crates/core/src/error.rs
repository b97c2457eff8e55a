use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid light field: {0}")]
    InvalidLightField(String),

    #[error("inconsistent view dimensions: {path} is {found_u}x{found_v}, expected {expected_u}x{expected_v}")]
    InconsistentDims {
        path: PathBuf,
        expected_u: usize,
        expected_v: usize,
        found_u: usize,
        found_v: usize,
    },

    #[error("view grid {ns}x{nt} has no unique central view (counts must be odd)")]
    EvenViewCount { ns: usize, nt: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("slope {slope} out of range: pixel ({u}, {v}) receives no samples from any view")]
    SlopeOutOfRange { slope: f64, u: usize, v: usize },

    #[error("focal stack is empty")]
    EmptyStack,

    #[error("joint scale-slope search needs at least three slopes, got {0}")]
    NeedThreeSlopes(usize),

    #[error("oracle input too large: {0}")]
    OracleTooLarge(String),

    #[error("disk {index} lies outside every view")]
    OutOfFrame { index: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error stems from unreadable or malformed input data rather than
    /// from bad parameters.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidLightField(_)
                | Error::InconsistentDims { .. }
                | Error::Io(_)
                | Error::Image(_)
                | Error::Json(_)
        )
    }
}
