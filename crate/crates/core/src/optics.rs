//! One-dimensional Gaussian intensity fields along the ion-chain axis.
//!
//! A [`BeamProfile`] is the intensity of one Raman arm at the ion plane:
//! a sum of principal addressing spots, low-amplitude stray spots, and a
//! constant pedestal. Intensities are dimensionless and use the 1/e²
//! waist convention, `A·exp(-2((x - x₀)/w)²)`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};

/// Default grid step for [`BeamProfile::extremum`], in µm.
pub const DEFAULT_GRID_STEP_UM: f64 = 0.01;

/// Rayleigh-criterion prefactor for the diffraction-limited spot radius.
const RAYLEIGH_FACTOR: f64 = 0.61;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpot {
    /// Peak intensity, dimensionless.
    pub amplitude: f64,
    /// Center position in µm.
    #[serde(rename = "center_um")]
    pub center: f64,
    /// 1/e² intensity radius in µm.
    #[serde(rename = "waist_um")]
    pub waist: f64,
}

impl GaussianSpot {
    pub fn new(amplitude: f64, center: f64, waist: f64) -> Result<Self> {
        let spot = Self {
            amplitude,
            center,
            waist,
        };
        spot.validate()?;
        Ok(spot)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("amplitude", self.amplitude)?;
        ensure_finite("center", self.center)?;
        ensure_finite("waist", self.waist)?;
        if self.amplitude < 0.0 {
            return Err(invalid("amplitude", format!("must be >= 0, got {}", self.amplitude)));
        }
        if self.waist <= 0.0 {
            return Err(invalid("waist", format!("must be > 0, got {}", self.waist)));
        }
        Ok(())
    }

    #[inline]
    pub fn intensity(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.waist;
        self.amplitude * (-2.0 * u * u).exp()
    }

    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            center: self.center + delta,
            ..*self
        }
    }
}

/// Intensity of one Raman arm along the chain axis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct BeamProfile {
    pub spots: Vec<GaussianSpot>,
    pub stray_spots: Vec<GaussianSpot>,
    pub floor: f64,
}

#[derive(Deserialize)]
struct RawProfile {
    #[serde(default)]
    spots: Vec<GaussianSpot>,
    #[serde(default)]
    stray_spots: Vec<GaussianSpot>,
    #[serde(default)]
    floor: f64,
}

impl TryFrom<RawProfile> for BeamProfile {
    type Error = Error;

    fn try_from(raw: RawProfile) -> Result<Self> {
        let profile = BeamProfile {
            spots: raw.spots,
            stray_spots: raw.stray_spots,
            floor: raw.floor,
        };
        profile.validate()?;
        Ok(profile)
    }
}

impl BeamProfile {
    pub fn new(spots: Vec<GaussianSpot>) -> Result<Self> {
        Self::with_stray(spots, Vec::new(), 0.0)
    }

    pub fn with_stray(
        spots: Vec<GaussianSpot>,
        stray_spots: Vec<GaussianSpot>,
        floor: f64,
    ) -> Result<Self> {
        let profile = Self {
            spots,
            stray_spots,
            floor,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn single(amplitude: f64, center: f64, waist: f64) -> Result<Self> {
        Self::new(vec![GaussianSpot::new(amplitude, center, waist)?])
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("floor", self.floor)?;
        if self.floor < 0.0 {
            return Err(invalid("floor", format!("must be >= 0, got {}", self.floor)));
        }
        self.all_spots().try_for_each(GaussianSpot::validate)
    }

    /// Principal spots followed by stray spots.
    pub fn all_spots(&self) -> impl Iterator<Item = &GaussianSpot> {
        self.spots.iter().chain(self.stray_spots.iter())
    }

    /// Floor plus the sum over every principal and stray spot.
    pub fn intensity_at(&self, x: f64) -> f64 {
        self.floor + self.all_spots().map(|s| s.intensity(x)).sum::<f64>()
    }

    /// Every spot center moved by `delta` µm.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            spots: self.spots.iter().map(|s| s.shifted(delta)).collect(),
            stray_spots: self.stray_spots.iter().map(|s| s.shifted(delta)).collect(),
            floor: self.floor,
        }
    }

    /// Union of the spot lists of both profiles; floors add.
    pub fn superpose(&self, other: &Self) -> Self {
        let mut spots = self.spots.clone();
        spots.extend_from_slice(&other.spots);
        let mut stray_spots = self.stray_spots.clone();
        stray_spots.extend_from_slice(&other.stray_spots);
        Self {
            spots,
            stray_spots,
            floor: self.floor + other.floor,
        }
    }

    /// Grid search for the brightest point in `[lo, hi]`.
    ///
    /// Ties resolve toward the smaller position.
    pub fn extremum(&self, lo: f64, hi: f64, step: f64) -> Result<(f64, f64)> {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::Domain(format!("empty window [{lo}, {hi}]")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(invalid("step", format!("must be > 0, got {step}")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        let mut best = (lo, self.intensity_at(lo));
        for k in 1..=n {
            let x = lo + k as f64 * step;
            let value = self.intensity_at(x);
            if value > best.1 {
                best = (x, value);
            }
        }
        Ok(best)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConstants {
    pub wavelength_nm: f64,
    pub numerical_aperture: f64,
}

impl OpticsConstants {
    pub fn new(wavelength_nm: f64, numerical_aperture: f64) -> Result<Self> {
        let c = Self {
            wavelength_nm,
            numerical_aperture,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("wavelength_nm", self.wavelength_nm)?;
        if self.wavelength_nm <= 0.0 {
            return Err(invalid("wavelength_nm", "must be > 0"));
        }
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture < 1.0) {
            return Err(invalid(
                "numerical_aperture",
                format!("must lie in (0, 1), got {}", self.numerical_aperture),
            ));
        }
        Ok(())
    }

    /// Rayleigh radius `0.61·λ/NA`, in µm.
    pub fn diffraction_limit_um(&self) -> f64 {
        RAYLEIGH_FACTOR * self.wavelength_nm / self.numerical_aperture * 1e-3
    }
}
