//! Acousto-optic deflector drive model.
//!
//! Drive tones map to focal-plane spots through an affine
//! frequency-to-position calibration. Diffracted intensity follows the
//! square of the RF amplitude (unsaturated regime); tone phases are
//! carried for scheduling but spots at distinct positions add
//! incoherently, so phases never change the profile.

use serde::{Deserialize, Serialize};

use crate::crosstalk::AddressingMode;
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::optics::{BeamProfile, GaussianSpot};

/// Two frequencies closer than this are the same tone.
const FREQUENCY_RESOLUTION_MHZ: f64 = 1e-9;
const BUDGET_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AodChannel {
    pub center_frequency_mhz: f64,
    /// Focal-plane displacement per MHz of detuning, µm/MHz.
    pub position_coefficient_um_per_mhz: f64,
    /// Focal position at the center frequency, µm.
    pub center_position_um: f64,
    pub nominal_waist_um: f64,
    /// Usable drive range; `None` accepts any frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_mhz: Option<(f64, f64)>,
}

impl AodChannel {
    pub fn new(
        center_frequency_mhz: f64,
        position_coefficient_um_per_mhz: f64,
        center_position_um: f64,
        nominal_waist_um: f64,
    ) -> Result<Self> {
        let ch = Self {
            center_frequency_mhz,
            position_coefficient_um_per_mhz,
            center_position_um,
            nominal_waist_um,
            bandwidth_mhz: None,
        };
        ch.validate()?;
        Ok(ch)
    }

    /// Two-point calibration: the unique affine map through both references.
    pub fn calibrate(
        center_frequency_mhz: f64,
        ref1: (f64, f64),
        ref2: (f64, f64),
        waist_um: f64,
    ) -> Result<Self> {
        let (f1, p1) = ref1;
        let (f2, p2) = ref2;
        for v in [center_frequency_mhz, f1, p1, f2, p2] {
            ensure_finite("calibration reference", v)?;
        }
        if (f2 - f1).abs() < FREQUENCY_RESOLUTION_MHZ {
            return Err(Error::DegenerateCalibration { frequency_mhz: f1 });
        }
        let coefficient = (p2 - p1) / (f2 - f1);
        let center_position = p1 + coefficient * (center_frequency_mhz - f1);
        Self::new(center_frequency_mhz, coefficient, center_position, waist_um)
    }

    pub fn with_bandwidth(mut self, lo_mhz: f64, hi_mhz: f64) -> Result<Self> {
        if !(lo_mhz < hi_mhz) {
            return Err(invalid("bandwidth_mhz", format!("empty range [{lo_mhz}, {hi_mhz}]")));
        }
        self.bandwidth_mhz = Some((lo_mhz, hi_mhz));
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("center_frequency_mhz", self.center_frequency_mhz)?;
        ensure_finite("position_coefficient_um_per_mhz", self.position_coefficient_um_per_mhz)?;
        ensure_finite("center_position_um", self.center_position_um)?;
        if self.position_coefficient_um_per_mhz == 0.0 {
            return Err(invalid("position_coefficient_um_per_mhz", "must be nonzero"));
        }
        if !(self.nominal_waist_um > 0.0 && self.nominal_waist_um.is_finite()) {
            return Err(invalid("nominal_waist_um", "must be > 0"));
        }
        Ok(())
    }

    #[inline]
    pub fn tone_to_position(&self, frequency_mhz: f64) -> f64 {
        self.center_position_um
            + self.position_coefficient_um_per_mhz * (frequency_mhz - self.center_frequency_mhz)
    }

    #[inline]
    pub fn position_to_tone(&self, position_um: f64) -> f64 {
        self.center_frequency_mhz
            + (position_um - self.center_position_um) / self.position_coefficient_um_per_mhz
    }

    pub fn in_band(&self, frequency_mhz: f64) -> bool {
        match self.bandwidth_mhz {
            Some((lo, hi)) => (lo..=hi).contains(&frequency_mhz),
            None => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveTone {
    pub frequency_mhz: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

impl DriveTone {
    pub fn new(frequency_mhz: f64, amplitude: f64) -> Self {
        Self {
            frequency_mhz,
            amplitude,
            phase_rad: 0.0,
        }
    }
}

/// Simultaneous drive tones of one AOD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawToneSet")]
pub struct ToneSet {
    pub tones: Vec<DriveTone>,
    /// Enforce Σ amplitude ≤ 1 as an RF compression limit.
    pub saturation_budget: bool,
}

#[derive(Deserialize)]
struct RawToneSet {
    tones: Vec<DriveTone>,
    #[serde(default = "default_true")]
    saturation_budget: bool,
}

fn default_true() -> bool {
    true
}

impl TryFrom<RawToneSet> for ToneSet {
    type Error = Error;

    fn try_from(raw: RawToneSet) -> Result<Self> {
        let set = ToneSet {
            tones: raw.tones,
            saturation_budget: raw.saturation_budget,
        };
        set.validate()?;
        Ok(set)
    }
}

impl ToneSet {
    pub fn new(tones: Vec<DriveTone>) -> Result<Self> {
        let set = Self {
            tones,
            saturation_budget: true,
        };
        set.validate()?;
        Ok(set)
    }

    /// Tone set without the amplitude-sum limit.
    pub fn unbudgeted(tones: Vec<DriveTone>) -> Result<Self> {
        let set = Self {
            tones,
            saturation_budget: false,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn single(frequency_mhz: f64, amplitude: f64) -> Result<Self> {
        Self::new(vec![DriveTone::new(frequency_mhz, amplitude)])
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tones.iter().enumerate() {
            if !t.frequency_mhz.is_finite() || !t.phase_rad.is_finite() {
                return Err(Error::InvalidToneSet(format!("tone {i} has a non-finite field")));
            }
            if !(0.0..=1.0).contains(&t.amplitude) {
                return Err(Error::InvalidToneSet(format!(
                    "tone {i} amplitude {} outside [0, 1]",
                    t.amplitude
                )));
            }
            for (j, u) in self.tones.iter().enumerate().skip(i + 1) {
                if (t.frequency_mhz - u.frequency_mhz).abs() < FREQUENCY_RESOLUTION_MHZ {
                    return Err(Error::InvalidToneSet(format!(
                        "tones {i} and {j} share frequency {} MHz",
                        t.frequency_mhz
                    )));
                }
            }
        }
        let total: f64 = self.tones.iter().map(|t| t.amplitude).sum();
        if self.saturation_budget && total > 1.0 + BUDGET_SLACK {
            return Err(Error::InvalidToneSet(format!(
                "amplitude sum {total} exceeds the saturation budget of 1"
            )));
        }
        Ok(())
    }
}

/// Source of ghost spots that accompany the principal diffracted spots.
pub trait StrayGenerator {
    fn ghosts(&self, channel: &AodChannel, principal: &[GaussianSpot]) -> Vec<GaussianSpot>;
}

/// Ghost copies of every principal spot at fixed offsets and a fixed
/// fraction of its peak intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GhostSpots {
    pub offsets_um: Vec<f64>,
    pub relative_amplitude: f64,
    /// Ghost waist; defaults to the principal spot's waist.
    #[serde(default)]
    pub waist_um: Option<f64>,
}

impl GhostSpots {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative_amplitude >= 0.0 && self.relative_amplitude.is_finite()) {
            return Err(invalid("relative_amplitude", "must be finite and >= 0"));
        }
        if let Some(w) = self.waist_um {
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid("waist_um", "must be > 0"));
            }
        }
        self.offsets_um
            .iter()
            .try_for_each(|&o| ensure_finite("offsets_um", o))
    }
}

impl StrayGenerator for GhostSpots {
    fn ghosts(&self, _channel: &AodChannel, principal: &[GaussianSpot]) -> Vec<GaussianSpot> {
        principal
            .iter()
            .flat_map(|s| {
                self.offsets_um.iter().map(move |&offset| GaussianSpot {
                    amplitude: s.amplitude * self.relative_amplitude,
                    center: s.center + offset,
                    waist: self.waist_um.unwrap_or(s.waist),
                })
            })
            .collect()
    }
}

/// One spot per tone at the calibrated position with intensity `amplitude²`.
pub fn toneset_to_profile(
    channel: &AodChannel,
    tones: &ToneSet,
    stray: Option<&dyn StrayGenerator>,
) -> Result<BeamProfile> {
    tones.validate()?;
    let spots: Vec<GaussianSpot> = tones
        .tones
        .iter()
        .map(|t| GaussianSpot {
            amplitude: t.amplitude * t.amplitude,
            center: channel.tone_to_position(t.frequency_mhz),
            waist: channel.nominal_waist_um,
        })
        .collect();
    let stray_spots = stray
        .map(|g| g.ghosts(channel, &spots))
        .unwrap_or_default();
    BeamProfile::with_stray(spots, stray_spots, 0.0)
}

/// Tones that land on each target position with amplitudes chosen so the
/// resulting Rabi rates are proportional to the requested ones.
///
/// With double-side addressing both arms carry the same tones, so the rate
/// at a target scales with one arm's intensity (amplitude ∝ √rate). With
/// single-side addressing the focused arm alone sets the rate through
/// √intensity (amplitude ∝ rate). Amplitudes are scaled so their sum
/// exhausts the saturation budget.
pub fn equalize_amplitudes(
    channel: &AodChannel,
    targets: &[(f64, f64)],
    mode: AddressingMode,
) -> Result<ToneSet> {
    if targets.is_empty() {
        return Err(Error::InvalidToneSet("no targets".into()));
    }
    let mut raw = Vec::with_capacity(targets.len());
    for (index, &(position, rate)) in targets.iter().enumerate() {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InfeasibleTone {
                index,
                reason: format!("requested rate {rate} must be positive"),
            });
        }
        let frequency = channel.position_to_tone(position);
        if !frequency.is_finite() || !channel.in_band(frequency) {
            return Err(Error::InfeasibleTone {
                index,
                reason: format!(
                    "position {position} um needs {frequency} MHz, outside the drive band"
                ),
            });
        }
        let weight = match mode {
            AddressingMode::DoubleSide => rate.sqrt(),
            AddressingMode::SingleSide => rate,
        };
        raw.push((frequency, weight));
    }
    let total: f64 = raw.iter().map(|&(_, w)| w).sum();
    let tones = raw
        .into_iter()
        .map(|(f, w)| DriveTone::new(f, w / total))
        .collect();
    ToneSet::new(tones)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ref_channel() -> AodChannel {
        AodChannel::calibrate(77.5, (77.07, 0.0), (78.03, 5.5), 0.95).unwrap()
    }

    #[test]
    fn rounded_channel_hits_ion_sites() {
        let ch = AodChannel::new(77.5, 5.7292, 2.4635, 0.95).unwrap();
        assert!(ch.tone_to_position(77.07).abs() < 1e-4);
        assert_relative_eq!(ch.tone_to_position(78.03), 5.5, epsilon = 1e-4);
        assert_eq!(ch.tone_to_position(77.5), 2.4635);
    }

    #[test]
    fn calibration_from_two_ions() {
        let ch = ref_channel();
        assert_relative_eq!(ch.position_coefficient_um_per_mhz, 5.5 / 0.96, max_relative = 1e-12);
        assert_relative_eq!(ch.position_coefficient_um_per_mhz, 5.7292, epsilon = 1e-4);
        assert_relative_eq!(ch.center_position_um, 2.4635, epsilon = 1e-4);
        assert!(ch.tone_to_position(77.07).abs() < 1e-12);
        assert_relative_eq!(ch.tone_to_position(78.03), 5.5, epsilon = 1e-12);
    }

    #[test]
    fn calibration_unit_map() {
        let ch = AodChannel::calibrate(77.5, (77.5, 0.0), (78.5, 1.0), 1.0).unwrap();
        assert_eq!(ch.position_coefficient_um_per_mhz, 1.0);
        assert_eq!(ch.center_position_um, 0.0);
    }

    #[test]
    fn degenerate_calibration() {
        let err = AodChannel::calibrate(77.5, (77.0, 0.0), (77.0, 1.0), 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateCalibration { .. }));
    }

    #[test]
    fn channel_rejects_zero_coefficient() {
        assert!(AodChannel::new(77.5, 0.0, 0.0, 1.0).is_err());
        assert!(AodChannel::new(77.5, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn single_tone_profile() {
        let ch = ref_channel();
        let p = toneset_to_profile(&ch, &ToneSet::single(77.07, 1.0).unwrap(), None).unwrap();
        assert_eq!(p.spots.len(), 1);
        assert!(p.spots[0].center.abs() < 1e-12);
        assert_eq!(p.spots[0].amplitude, 1.0);
        assert!(p.stray_spots.is_empty());
    }

    #[test]
    fn two_half_amplitude_tones() {
        let ch = ref_channel();
        let set = ToneSet::new(vec![DriveTone::new(77.07, 0.5), DriveTone::new(78.03, 0.5)]).unwrap();
        let p = toneset_to_profile(&ch, &set, None).unwrap();
        assert_eq!(p.spots[0].amplitude, 0.25);
        assert_eq!(p.spots[1].amplitude, 0.25);
        assert_relative_eq!(p.spots[1].center - p.spots[0].center, 5.5, epsilon = 1e-12);
    }

    #[test]
    fn ten_tone_comb_spacing() {
        let ch = ref_channel();
        let tones = (0..10)
            .map(|k| DriveTone::new(77.07 + 0.96 * k as f64, 0.1))
            .collect();
        let p = toneset_to_profile(&ch, &ToneSet::new(tones).unwrap(), None).unwrap();
        for pair in p.spots.windows(2) {
            assert_relative_eq!(pair[1].center - pair[0].center, 5.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn budget_and_duplicates() {
        let over = ToneSet::new(vec![DriveTone::new(77.0, 0.7), DriveTone::new(78.0, 0.7)]);
        assert!(matches!(over, Err(Error::InvalidToneSet(_))));
        assert!(ToneSet::unbudgeted(vec![DriveTone::new(77.0, 0.7), DriveTone::new(78.0, 0.7)]).is_ok());
        let dup = ToneSet::new(vec![DriveTone::new(77.0, 0.1), DriveTone::new(77.0, 0.1)]);
        assert!(dup.is_err());
        assert!(ToneSet::single(77.0, 1.5).is_err());
    }

    #[test]
    fn ghosts_follow_tones() {
        let ch = ref_channel();
        let ghosts = GhostSpots {
            offsets_um: vec![-5.5, 5.5],
            relative_amplitude: 1e-3,
            waist_um: None,
        };
        let p = toneset_to_profile(&ch, &ToneSet::single(77.07, 1.0).unwrap(), Some(&ghosts)).unwrap();
        assert_eq!(p.stray_spots.len(), 2);
        assert_relative_eq!(p.intensity_at(5.5), 1e-3, max_relative = 1e-12);
    }

    #[test]
    fn equalize_symmetric_targets() {
        let ch = ref_channel();
        let set = equalize_amplitudes(&ch, &[(0.0, 1.0), (5.5, 1.0)], AddressingMode::DoubleSide).unwrap();
        assert_eq!(set.tones[0].amplitude, set.tones[1].amplitude);
        assert_relative_eq!(set.tones[0].amplitude + set.tones[1].amplitude, 1.0, epsilon = 1e-15);
        assert_relative_eq!(set.tones[0].frequency_mhz, 77.07, epsilon = 1e-12);
        assert_relative_eq!(set.tones[1].frequency_mhz, 78.03, epsilon = 1e-12);
    }

    #[test]
    fn equalize_measured_rates_double_side() {
        // Ion couplings 43.78 and 32.42 kHz; equal final rates need the
        // requested relative rate inversely proportional to each coupling.
        let ch = ref_channel();
        let set = equalize_amplitudes(
            &ch,
            &[(0.0, 1.0 / 43.78), (5.5, 1.0 / 32.42)],
            AddressingMode::DoubleSide,
        )
        .unwrap();
        let ratio = set.tones[0].amplitude / set.tones[1].amplitude;
        assert_relative_eq!(ratio, (32.42f64 / 43.78).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(ratio, 0.8605, epsilon = 1e-4);
    }

    #[test]
    fn equalize_single_target() {
        let ch = ref_channel();
        let set = equalize_amplitudes(&ch, &[(2.0, 3.0)], AddressingMode::SingleSide).unwrap();
        assert_eq!(set.tones.len(), 1);
        assert_eq!(set.tones[0].amplitude, 1.0);
    }

    #[test]
    fn equalize_infeasible() {
        let ch = ref_channel().with_bandwidth(76.0, 79.0).unwrap();
        let err = equalize_amplitudes(&ch, &[(0.0, 1.0), (50.0, 1.0)], AddressingMode::DoubleSide)
            .unwrap_err();
        assert!(matches!(err, Error::InfeasibleTone { index: 1, .. }));
        let err = equalize_amplitudes(&ch, &[(0.0, 0.0)], AddressingMode::DoubleSide).unwrap_err();
        assert!(matches!(err, Error::InfeasibleTone { index: 0, .. }));
    }

    #[test]
    fn toneset_json() {
        let set = ToneSet::new(vec![DriveTone {
            frequency_mhz: 77.071,
            amplitude: 0.5,
            phase_rad: 0.25,
        }])
        .unwrap();
        let text = serde_json::to_string(&set).unwrap();
        let back: ToneSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, set);
        let bad = r#"{"tones":[{"frequency_mhz":77,"amplitude":0.8},{"frequency_mhz":78,"amplitude":0.8}]}"#;
        assert!(serde_json::from_str::<ToneSet>(bad).is_err());
        let ch: AodChannel = serde_json::from_str(&serde_json::to_string(&ref_channel()).unwrap()).unwrap();
        assert_eq!(ch, ref_channel());
    }
}
