//! Inverse procedures: multi-Gaussian profile fits, Rabi-flopping fits,
//! and the slow-rate arccos extraction used for crosstalk.

mod gaussian;
mod lm;
mod rabi;

pub use gaussian::{
    detect_peaks, extract_spacing_and_waist, fit_multi_gaussian, fit_multi_gaussian_with,
    FitOptions, FitResult, Peak, ScanWaist, SpacingAndWaist, SpotSensitivity, FWHM_TO_WAIST,
};
pub use rabi::{extract_slow_rabi, fit_rabi_flopping, rabi_crosstalk, RabiFit};
