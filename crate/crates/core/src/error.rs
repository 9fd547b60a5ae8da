use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("empty annotation")]
    EmptyAnnotation,
    #[error("bands would cross box center (lambda = {0})")]
    BandsCrossCenter(f64),
    #[error("no supervised pixels")]
    NoSupervisedPixels,
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("degenerate dimension: {0}x{1} map needs at least 2 pixels per axis")]
    DegenerateDimension(usize, usize),
    #[error("noise destroyed annotation")]
    NoiseDestroyedAnnotation,
    #[error("undefined HD: empty mask")]
    UndefinedHausdorff,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidBox(_)
                | Error::BandsCrossCenter(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::Json(_)
        )
    }
}
