//! Forward models and analysis routines for individual optical addressing
//! of trapped-ion qubits with acousto-optic deflectors.
//!
//! Units: positions in µm, frequencies in MHz, Rabi rates in rad/s,
//! times in seconds unless a name says otherwise.

pub mod aod;
pub mod crosstalk;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod imaging;
pub mod optics;

pub use error::{Error, Result};
