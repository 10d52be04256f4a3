//! Scenario files: one TOML document describing an apparatus and the
//! default parameters of every command.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use ionaddr::aod::{AodChannel, GhostSpots};
use ionaddr::crosstalk::{AddressingMode, AddressingSystem, IonChain};
use ionaddr::dynamics::{ArmDrive, DecayModel, ScanArms, ScanTemplate, SequenceTiming};
use ionaddr::imaging::McpmtGeometry;
use ionaddr::optics::{BeamProfile, OpticsConstants};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "IONADDR_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: Option<u64>,
    pub mode: AddressingMode,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub optics: OpticsConstants,
    pub aod: AodSection,
    /// Second arm; a copy of `aod` when absent.
    #[serde(default)]
    pub aod2: Option<AodSection>,
    #[serde(default)]
    pub stray: Option<GhostSpots>,
    /// Stray model of the second arm; a copy of `stray` when absent.
    #[serde(default)]
    pub stray2: Option<GhostSpots>,
    /// Full-drive rate for ions without `rabi_khz`, in kHz (Ω/2π).
    #[serde(default)]
    pub peak_rabi_khz: Option<f64>,
    pub ions: Vec<IonSection>,
    #[serde(default)]
    pub timing: SequenceTiming,
    #[serde(default)]
    pub decay: DecaySection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub rabi: RabiSection,
    #[serde(default)]
    pub crosstalk: CrosstalkSection,
    #[serde(default)]
    pub imaging: ImagingSection,
    #[serde(default)]
    pub mcpmt: McpmtGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AodSection {
    pub center_frequency_mhz: f64,
    pub waist_um: f64,
    /// Two `[frequency MHz, position µm]` points.
    #[serde(default)]
    pub calibration: Option<[[f64; 2]; 2]>,
    #[serde(default)]
    pub position_coefficient_um_per_mhz: Option<f64>,
    #[serde(default)]
    pub center_position_um: Option<f64>,
    #[serde(default)]
    pub bandwidth_mhz: Option<[f64; 2]>,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonSection {
    pub label: Option<String>,
    /// Drive frequency that centers arm 1 on the ion.
    pub frequency_mhz: Option<f64>,
    pub position_um: Option<f64>,
    /// Rabi rate under full drive, kHz (Ω/2π).
    pub rabi_khz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    #[serde(default)]
    pub rate_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub freq_start_mhz: f64,
    pub freq_stop_mhz: f64,
    pub freq_step_mhz: f64,
    pub raman_time_us: f64,
    /// When set, arm 2 stays at this frequency while arm 1 scans.
    pub parked_mhz: Option<f64>,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            freq_start_mhz: 76.5,
            freq_stop_mhz: 78.5,
            freq_step_mhz: 0.02,
            raman_time_us: 10.0,
            parked_mhz: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiSection {
    pub t_max_us: f64,
    pub points: usize,
}

impl Default for RabiSection {
    fn default() -> Self {
        Self {
            t_max_us: 100.0,
            points: 101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrosstalkSection {
    pub t_long_us: f64,
    pub points: usize,
}

impl Default for CrosstalkSection {
    fn default() -> Self {
        Self {
            t_long_us: 5000.0,
            points: 51,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingSection {
    pub pixel_pitch_um: f64,
    pub transverse_waist_um: f64,
    pub background: f64,
    pub noise_sigma: f64,
    /// Counts at the center of a full-amplitude spot.
    pub peak_counts: f64,
    /// Field of view extends this far beyond the outermost spots.
    pub margin_um: f64,
    pub magnification: f64,
}

impl Default for ImagingSection {
    fn default() -> Self {
        Self {
            pixel_pitch_um: 0.1,
            transverse_waist_um: 0.95,
            background: 100.0,
            noise_sigma: 0.0,
            peak_counts: 1e6,
            margin_um: 8.0,
            magnification: 200.0,
        }
    }
}

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl AodSection {
    pub fn channel(&self) -> Result<AodChannel, CliError> {
        let fc = self.center_frequency_mhz;
        let channel = match (
            self.calibration,
            self.position_coefficient_um_per_mhz,
            self.center_position_um,
        ) {
            (Some([[f1, p1], [f2, p2]]), None, None) => {
                AodChannel::calibrate(fc, (f1, p1), (f2, p2), self.waist_um)?
            }
            (None, Some(k), c) => AodChannel::new(fc, k, c.unwrap_or(0.0), self.waist_um)?,
            (None, None, _) => {
                return Err(config(
                    "aod: give either `calibration` or `position_coefficient_um_per_mhz`",
                ))
            }
            _ => {
                return Err(config(
                    "aod: `calibration` excludes `position_coefficient_um_per_mhz`/`center_position_um`",
                ))
            }
        };
        match self.bandwidth_mhz {
            Some([lo, hi]) => Ok(channel.with_bandwidth(lo, hi)?),
            None => Ok(channel),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| config(format!("scenario: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.optics.validate()?;
        self.aod.channel()?;
        if let Some(a) = &self.aod2 {
            a.channel()?;
        }
        for s in [&self.stray, &self.stray2].into_iter().flatten() {
            s.validate()?;
        }
        if self.ions.is_empty() {
            return Err(config("scenario needs at least one [[ions]] entry"));
        }
        for (i, ion) in self.ions.iter().enumerate() {
            match (ion.frequency_mhz, ion.position_um) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(config(format!(
                        "ions[{i}]: give exactly one of `frequency_mhz` and `position_um`"
                    )))
                }
            }
            if ion.rabi_khz.is_none() && self.peak_rabi_khz.is_none() {
                return Err(config(format!(
                    "ions[{i}]: no `rabi_khz` and no scenario-level `peak_rabi_khz`"
                )));
            }
            if let Some(r) = ion.rabi_khz {
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(config(format!("ions[{i}]: rabi_khz must be >= 0, got {r}")));
                }
            }
        }
        self.timing.validate()?;
        DecayModel::new(self.decay.rate_per_s)?;
        self.mcpmt.validate()?;
        self.chain()?;
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| config("sampling commands need a `seed` in the scenario"))
    }

    pub fn decay(&self) -> DecayModel {
        DecayModel {
            rate_per_s: self.decay.rate_per_s,
        }
    }

    pub fn channel1(&self) -> Result<AodChannel, CliError> {
        self.aod.channel()
    }

    pub fn channel2(&self) -> Result<AodChannel, CliError> {
        self.aod2.as_ref().unwrap_or(&self.aod).channel()
    }

    pub fn peak_rabi(&self) -> f64 {
        self.peak_rabi_khz.map_or(0.0, |k| TAU * k * 1e3)
    }

    pub fn ion_frequency(&self, index: usize) -> Result<f64, CliError> {
        let ion = &self.ions[index];
        match (ion.frequency_mhz, ion.position_um) {
            (Some(f), _) => Ok(f),
            (None, Some(x)) => Ok(self.channel1()?.position_to_tone(x)),
            (None, None) => Err(config(format!("ions[{index}] has no location"))),
        }
    }

    pub fn chain(&self) -> Result<IonChain, CliError> {
        let ch = self.channel1()?;
        let positions = (0..self.ions.len())
            .map(|i| match self.ions[i].position_um {
                Some(x) => Ok(x),
                None => Ok(ch.tone_to_position(self.ion_frequency(i)?)),
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let labels = self
            .ions
            .iter()
            .enumerate()
            .map(|(i, ion)| ion.label.clone().unwrap_or_else(|| format!("ion{i}")))
            .collect();
        let peak = self.peak_rabi();
        let rates = self
            .ions
            .iter()
            .map(|ion| ion.rabi_khz.map_or(peak, |k| TAU * k * 1e3))
            .collect();
        IonChain::new(positions)
            .and_then(|c| c.with_labels(labels))
            .and_then(|c| c.with_rabi_rates(rates))
            .map_err(|e| config(format!("ion chain: {e}")))
    }

    pub fn ion_index(&self, key: &str) -> Result<usize, CliError> {
        let chain = self.chain()?;
        (0..chain.len())
            .find(|&i| chain.label(i) == key)
            .or_else(|| key.parse::<usize>().ok().filter(|&i| i < chain.len()))
            .ok_or_else(|| config(format!("no ion `{key}` in the scenario")))
    }

    fn arm(&self, second: bool) -> Result<ArmDrive, CliError> {
        let (section, stray) = if second {
            (
                self.aod2.as_ref().unwrap_or(&self.aod),
                self.stray2.as_ref().or(self.stray.as_ref()),
            )
        } else {
            (&self.aod, self.stray.as_ref())
        };
        let mut arm = ArmDrive::new(section.channel()?);
        arm.amplitude = section.amplitude;
        if let Some(s) = stray {
            arm = arm.with_stray(s.clone());
        }
        Ok(arm)
    }

    pub fn scan_template(&self, mode: AddressingMode) -> Result<ScanTemplate, CliError> {
        let arm2 = match mode {
            AddressingMode::SingleSide => None,
            AddressingMode::DoubleSide => Some(self.arm(true)?),
        };
        Ok(ScanTemplate {
            arm1: self.arm(false)?,
            arm2,
            scan_arms: match self.scan.parked_mhz {
                Some(parked_mhz) => ScanArms::FirstOnly { parked_mhz },
                None => ScanArms::Both,
            },
            peak_rabi: self.peak_rabi(),
        })
    }

    /// Addressing system with both arms (or the single focused arm) tuned
    /// to ion `index`.
    pub fn system_for(&self, index: usize, mode: AddressingMode) -> Result<AddressingSystem, CliError> {
        let f = self.ion_frequency(index)?;
        let template = ScanTemplate {
            scan_arms: ScanArms::Both,
            ..self.scan_template(mode)?
        };
        Ok(template.system_at(f)?.0)
    }

    /// Profile of arm 1 tuned to ion `index`, stray spots included.
    pub fn arm1_profile(&self, frequency_mhz: f64) -> Result<BeamProfile, CliError> {
        let template = self.scan_template(AddressingMode::SingleSide)?;
        Ok(template.system_at(frequency_mhz)?.0.arm1)
    }

    /// `$IONADDR_OUTPUT_DIR`, else the scenario's `output_dir`, else
    /// `ionaddr-out` in the working directory.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("ionaddr-out")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "min"
seed = 1
mode = "dsa"

[optics]
wavelength_nm = 532.0
numerical_aperture = 0.4

[aod]
center_frequency_mhz = 77.5
waist_um = 0.95
calibration = [[77.07, 0.0], [78.03, 5.5]]

[[ions]]
label = "A"
frequency_mhz = 77.07
rabi_khz = 43.78
"#;

    #[test]
    fn minimal_parses() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.timing, SequenceTiming::default());
        let chain = s.chain().unwrap();
        assert_eq!(chain.len(), 1);
        assert!(chain.positions_um[0].abs() < 1e-12);
    }

    #[test]
    fn errors_carry_line() {
        let bad = MINIMAL.replace("waist_um = 0.95", "waist_um = \"wide\"");
        let e = Scenario::parse(&bad).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
        assert!(e.to_string().contains("line"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("seed = 1", "seed = 1\ncolour = 3");
        assert!(Scenario::parse(&bad).is_err());
    }

    #[test]
    fn ion_needs_one_location() {
        let bad = MINIMAL.replace("frequency_mhz = 77.07", "frequency_mhz = 77.07\nposition_um = 1.0");
        assert!(Scenario::parse(&bad).is_err());
    }

    #[test]
    fn ion_lookup() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.ion_index("A").unwrap(), 0);
        assert_eq!(s.ion_index("0").unwrap(), 0);
        assert!(s.ion_index("Z").is_err());
    }
}
