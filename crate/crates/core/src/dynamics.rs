//! Resonant carrier Rabi evolution, the two experiment shapes (drive
//! frequency scan and interaction-time scan), sequence timing, and
//! seeded finite-shot sampling.
//!
//! Randomness: every `(ion, scan point)` pair draws from its own ChaCha8
//! substream, `ChaCha8Rng::seed_from_u64(seed)` with stream id
//! `(ion << 32) | point`. Results therefore do not depend on evaluation
//! order or thread count.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aod::{toneset_to_profile, AodChannel, GhostSpots, StrayGenerator, ToneSet};
use crate::crosstalk::{AddressingMode, AddressingSystem, IonChain};
use crate::error::{ensure_finite, invalid, Error, Result};

/// Hyperfine splitting of the qubit, GHz. Metadata only.
pub const HYPERFINE_SPLITTING_GHZ: f64 = 12.64;

/// Two hyperfine ground states; every shot starts in |0⟩.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitSpec {
    pub hyperfine_splitting_ghz: f64,
}

impl Default for QubitSpec {
    fn default() -> Self {
        Self {
            hyperfine_splitting_ghz: HYPERFINE_SPLITTING_GHZ,
        }
    }
}

impl QubitSpec {
    pub fn initial_excitation(&self) -> f64 {
        0.0
    }
}

/// Stage durations of one shot, µs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceTiming {
    pub doppler_us: f64,
    pub eit_us: f64,
    pub pump_us: f64,
    pub detect_us: f64,
    pub repetitions: u64,
}

impl Default for SequenceTiming {
    fn default() -> Self {
        Self {
            doppler_us: 1000.0,
            eit_us: 1000.0,
            pump_us: 20.0,
            detect_us: 1000.0,
            repetitions: 100,
        }
    }
}

impl SequenceTiming {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("doppler_us", self.doppler_us),
            ("eit_us", self.eit_us),
            ("pump_us", self.pump_us),
            ("detect_us", self.detect_us),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be >= 1"));
        }
        Ok(())
    }

    /// `(per-shot, total)` duration in µs for a Raman pulse of `raman_us`.
    pub fn duration(&self, raman_us: f64) -> Result<(f64, f64)> {
        self.validate()?;
        if !(raman_us >= 0.0 && raman_us.is_finite()) {
            return Err(invalid("raman_us", format!("must be finite and >= 0, got {raman_us}")));
        }
        let per_shot = self.doppler_us + self.eit_us + self.pump_us + raman_us + self.detect_us;
        Ok((per_shot, per_shot * self.repetitions as f64))
    }
}

/// Exponential contrast envelope on the Rabi cosine.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecayModel {
    pub rate_per_s: f64,
}

impl DecayModel {
    pub const NONE: Self = Self { rate_per_s: 0.0 };

    pub fn new(rate_per_s: f64) -> Result<Self> {
        if !(rate_per_s >= 0.0 && rate_per_s.is_finite()) {
            return Err(invalid("rate_per_s", "must be finite and >= 0"));
        }
        Ok(Self { rate_per_s })
    }
}

/// Probability of |1⟩ after driving |0⟩ for `t_s` seconds at `rabi` rad/s:
/// `½(1 − e^{−γt}·cos Ωt)`.
pub fn excitation_probability(rabi: f64, t_s: f64, decay: DecayModel) -> f64 {
    let p = if decay.rate_per_s == 0.0 {
        // ½(1 − cos θ) = sin²(θ/2), which keeps full relative precision for small θ.
        let s = (0.5 * rabi * t_s).sin();
        s * s
    } else {
        0.5 * (1.0 - (-decay.rate_per_s * t_s).exp() * (rabi * t_s).cos())
    };
    p.clamp(0.0, 1.0)
}

/// Seeded generator of binomial shot counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotSampler {
    seed: u64,
}

impl ShotSampler {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn substream(&self, ion: usize, point: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((ion as u64) << 32) | (point as u64 & 0xFFFF_FFFF));
        rng
    }

    /// Number of |1⟩ outcomes in `shots` projective measurements.
    pub fn excited_count(&self, ion: usize, point: usize, p: f64, shots: u64) -> u64 {
        let dist = Binomial::new(shots, p.clamp(0.0, 1.0)).expect("probability clamped to [0, 1]");
        dist.sample(&mut self.substream(ion, point))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVariable {
    FrequencyMhz,
    TimeUs,
}

impl ScanVariable {
    pub fn column(self) -> &'static str {
        match self {
            Self::FrequencyMhz => "scan_variable_mhz",
            Self::TimeUs => "scan_variable_us",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub scan_value: f64,
    pub p_estimate: f64,
    pub shots: u64,
    pub p_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonSeries {
    pub label: String,
    pub points: Vec<ScanPoint>,
}

impl IonSeries {
    pub fn estimates(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.scan_value, p.p_estimate)).collect()
    }

    pub fn exact(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.scan_value, p.p_exact)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub variable: ScanVariable,
    pub series: Vec<IonSeries>,
}

impl ScanResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},ion_label,p_estimate,shots,p_exact\n",
            self.variable.column()
        );
        for s in &self.series {
            for p in &s.points {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    p.scan_value, s.label, p.p_estimate, p.shots, p.p_exact
                );
            }
        }
        out
    }
}

/// RF drive of one focused arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmDrive {
    pub channel: AodChannel,
    #[serde(default)]
    pub stray: Option<GhostSpots>,
    #[serde(default = "unit_amplitude")]
    pub amplitude: f64,
}

fn unit_amplitude() -> f64 {
    1.0
}

impl ArmDrive {
    pub fn new(channel: AodChannel) -> Self {
        Self {
            channel,
            stray: None,
            amplitude: 1.0,
        }
    }

    pub fn with_stray(mut self, stray: GhostSpots) -> Self {
        self.stray = Some(stray);
        self
    }

    fn profile_at(&self, frequency_mhz: f64) -> Result<(crate::optics::BeamProfile, f64)> {
        let tones = ToneSet::single(frequency_mhz, self.amplitude)?;
        let stray = self.stray.as_ref().map(|g| g as &dyn StrayGenerator);
        let profile = toneset_to_profile(&self.channel, &tones, stray)?;
        Ok((profile, self.channel.tone_to_position(frequency_mhz)))
    }
}

/// Which arms follow the scanned drive frequency.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanArms {
    /// Both AODs receive the same scanned tone.
    #[default]
    Both,
    /// Only the first arm scans; the second stays at `parked_mhz`.
    FirstOnly { parked_mhz: f64 },
}

/// Generator of single-tone addressing systems for a drive-frequency scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTemplate {
    pub arm1: ArmDrive,
    /// `None` is a uniform global beam (single-side addressing).
    pub arm2: Option<ArmDrive>,
    #[serde(default)]
    pub scan_arms: ScanArms,
    /// Full-drive Rabi rate (rad/s) for ions without their own rate.
    #[serde(default)]
    pub peak_rabi: f64,
}

impl ScanTemplate {
    pub fn mode(&self) -> AddressingMode {
        if self.arm2.is_some() {
            AddressingMode::DoubleSide
        } else {
            AddressingMode::SingleSide
        }
    }

    /// The addressing system with arm 1 driven at `frequency_mhz`, plus the
    /// reference sites (beam centers) each arm is normalized at.
    pub fn system_at(&self, frequency_mhz: f64) -> Result<(AddressingSystem, f64, f64)> {
        let peak_rabi = self.peak_rabi;
        let (p1, c1) = self.arm1.profile_at(frequency_mhz)?;
        match &self.arm2 {
            None => Ok((AddressingSystem::single_side(p1, peak_rabi), c1, c1)),
            Some(arm2) => {
                let f2 = match self.scan_arms {
                    ScanArms::Both => frequency_mhz,
                    ScanArms::FirstOnly { parked_mhz } => parked_mhz,
                };
                let (p2, c2) = arm2.profile_at(f2)?;
                Ok((AddressingSystem::double_side(p1, p2, peak_rabi), c1, c2))
            }
        }
    }
}

/// Rabi rate of every ion while the beam addresses `x_addressed`.
///
/// Each ion's rate is its own full-drive rate (from the chain, else
/// `system.peak_rabi`) scaled by the relative Rabi field at its position.
pub fn ion_rates(system: &AddressingSystem, chain: &IonChain, x_addressed: f64) -> Result<Vec<f64>> {
    chain
        .positions_um
        .iter()
        .enumerate()
        .map(|(j, &x)| Ok(chain.rabi_rate(j, system.peak_rabi) * system.relative_rate(x, x_addressed)?))
        .collect()
}

fn sample_grid(
    rates_per_point: &[Vec<f64>],
    scan_values: &[f64],
    t_of_point: impl Fn(usize) -> f64 + Sync,
    chain: &IonChain,
    shots: u64,
    decay: DecayModel,
    sampler: ShotSampler,
) -> Vec<IonSeries> {
    (0..chain.len())
        .map(|ion| {
            let points = scan_values
                .par_iter()
                .enumerate()
                .map(|(k, &value)| {
                    let p_exact = excitation_probability(rates_per_point[k][ion], t_of_point(k), decay);
                    let count = sampler.excited_count(ion, k, p_exact, shots);
                    ScanPoint {
                        scan_value: value,
                        p_estimate: count as f64 / shots as f64,
                        shots,
                        p_exact,
                    }
                })
                .collect();
            IonSeries {
                label: chain.label(ion),
                points,
            }
        })
        .collect()
}

/// Excitation of every ion versus the AOD drive frequency at a fixed
/// Raman interaction time.
pub fn frequency_scan(
    template: &ScanTemplate,
    chain: &IonChain,
    frequencies_mhz: &[f64],
    t_fixed_us: f64,
    timing: &SequenceTiming,
    seed: u64,
) -> Result<ScanResult> {
    if frequencies_mhz.is_empty() {
        return Err(Error::Domain("frequency scan needs at least one frequency".into()));
    }
    if !(t_fixed_us > 0.0 && t_fixed_us.is_finite()) {
        return Err(invalid("t_fixed_us", "must be > 0"));
    }
    timing.validate()?;
    chain.validate()?;
    let rates: Vec<Vec<f64>> = frequencies_mhz
        .iter()
        .map(|&f| {
            ensure_finite("frequency", f)?;
            let (system, c1, c2) = template.system_at(f)?;
            chain
                .positions_um
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    Ok(chain.rabi_rate(j, system.peak_rabi) * system.relative_rate_split(x, c1, c2)?)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let t_s = t_fixed_us * 1e-6;
    let series = sample_grid(
        &rates,
        frequencies_mhz,
        |_| t_s,
        chain,
        timing.repetitions,
        DecayModel::NONE,
        ShotSampler::new(seed),
    );
    Ok(ScanResult {
        variable: ScanVariable::FrequencyMhz,
        series,
    })
}

/// Excitation of every ion versus interaction time while one site is
/// addressed.
pub fn time_scan(
    system: &AddressingSystem,
    chain: &IonChain,
    x_addressed: f64,
    times_us: &[f64],
    timing: &SequenceTiming,
    decay: DecayModel,
    seed: u64,
) -> Result<ScanResult> {
    if times_us.is_empty() {
        return Err(Error::Domain("time scan needs at least one time".into()));
    }
    if times_us.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(invalid("times_us", "times must be finite and >= 0"));
    }
    if times_us.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("times_us", "times must be sorted ascending"));
    }
    timing.validate()?;
    chain.validate()?;
    let rates = ion_rates(system, chain, x_addressed)?;
    let per_point = vec![rates; times_us.len()];
    let series = sample_grid(
        &per_point,
        times_us,
        |k| times_us[k] * 1e-6,
        chain,
        timing.repetitions,
        decay,
        ShotSampler::new(seed),
    );
    Ok(ScanResult {
        variable: ScanVariable::TimeUs,
        series,
    })
}
