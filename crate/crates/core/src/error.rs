use thiserror::Error;

/// Errors raised by the forward models and the analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate calibration: reference frequencies coincide at {frequency_mhz} MHz")]
    DegenerateCalibration { frequency_mhz: f64 },

    #[error("invalid tone set: {0}")]
    InvalidToneSet(String),

    #[error("infeasible tone {index}: {reason}")]
    InfeasibleTone { index: usize, reason: String },

    #[error("zero intensity at the normalization site x = {position_um} um")]
    Normalization { position_um: f64 },

    #[error("crosstalk entry (addressed {addressed}, victim {victim}): {source}")]
    MatrixEntry {
        addressed: usize,
        victim: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("ambiguous Rabi fit: {0}; use the slow-rate arccos extraction instead")]
    AmbiguousRabi(String),

    #[error("mismatched image geometry: {0}")]
    GeometryMismatch(String),

    #[error("section line does not intersect the image")]
    EmptySection,

    #[error("ion {index} images at {image_position_um} um, outside the detector")]
    OffDetector { index: usize, image_position_um: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite, got {value}")))
    }
}
