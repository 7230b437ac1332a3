use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("position ({x:.3}, {y:.3}) mm lies outside the surface region")]
    OutsideSurface { x: f64, y: f64 },

    #[error("time {t:.6} s outside pose range [{first:.6}, {last:.6}] s")]
    OutOfRange { t: f64, first: f64, last: f64 },

    #[error("frame {index} at t = {t:.6} s is outside the recorded pose range")]
    FrameOutsidePoses { index: usize, t: f64 },

    #[error("{lobe} lobe: initial pose does not show thyroid")]
    NoThyroidAtStart { lobe: String },

    #[error("{lobe} lobe: scan exceeded {limit} steps without finding both lobe ends")]
    StepLimit { lobe: String, limit: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{lobe} lobe: {source}")]
    Lobe {
        lobe: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from bad input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid { .. } | Error::Json(_) => true,
            Error::Lobe { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
