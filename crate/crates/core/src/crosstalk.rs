//! Rabi-rate fields and crosstalk figures for single- and double-side
//! addressing.
//!
//! A stimulated Raman transition driven by two arms has Ω ∝ √I₁·√I₂.
//! With a uniform global arm (single-side), the Rabi crosstalk at a
//! neighbor is √ε for intensity crosstalk ε; with two focused arms of the
//! same shape (double-side) it is ε itself.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::optics::BeamProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AddressingMode {
    #[serde(rename = "ssa", alias = "single-side")]
    SingleSide,
    #[serde(rename = "dsa", alias = "double-side")]
    DoubleSide,
}

impl AddressingMode {
    pub fn short_name(self) -> &'static str {
        match self {
            Self::SingleSide => "SSA",
            Self::DoubleSide => "DSA",
        }
    }
}

/// Ordered ion positions along the chain axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonChain {
    pub positions_um: Vec<f64>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    /// Rabi rate (rad/s) each ion reaches when it is the addressed ion at
    /// full drive. Induced rates on a victim scale from the victim's own
    /// value. `None` uses the system's `peak_rabi` for every ion.
    #[serde(default)]
    pub rabi_rates: Option<Vec<f64>>,
}

impl IonChain {
    pub fn new(positions_um: Vec<f64>) -> Result<Self> {
        let chain = Self {
            positions_um,
            labels: None,
            rabi_rates: None,
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn evenly_spaced(n: usize, spacing_um: f64) -> Result<Self> {
        Self::new((0..n).map(|i| i as f64 * spacing_um).collect())
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        self.labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn with_rabi_rates(mut self, rates: Vec<f64>) -> Result<Self> {
        self.rabi_rates = Some(rates);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.positions_um
            .iter()
            .try_for_each(|&x| ensure_finite("positions_um", x))?;
        if self.positions_um.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("positions_um", "must be strictly increasing"));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(invalid("labels", "one label per ion required"));
            }
        }
        if let Some(rates) = &self.rabi_rates {
            if rates.len() != self.len() {
                return Err(invalid("rabi_rates", "one rate per ion required"));
            }
            if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(invalid("rabi_rates", "rates must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions_um.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions_um.is_empty()
    }

    pub fn label(&self, index: usize) -> String {
        match &self.labels {
            Some(labels) => labels[index].clone(),
            None => format!("ion{index}"),
        }
    }

    /// Full-drive Rabi rate of ion `index`, falling back to `default`.
    pub fn rabi_rate(&self, index: usize, default: f64) -> f64 {
        self.rabi_rates
            .as_ref()
            .map_or(default, |rates| rates[index])
    }
}

/// Second Raman arm: a uniform global beam or a focused profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondArm {
    Uniform,
    Focused(BeamProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddressingSystem {
    pub arm1: BeamProfile,
    pub arm2: SecondArm,
    /// Rabi rate at the addressed site, rad/s.
    pub peak_rabi: f64,
}

impl AddressingSystem {
    pub fn single_side(individual: BeamProfile, peak_rabi: f64) -> Self {
        Self {
            arm1: individual,
            arm2: SecondArm::Uniform,
            peak_rabi,
        }
    }

    pub fn double_side(arm1: BeamProfile, arm2: BeamProfile, peak_rabi: f64) -> Self {
        Self {
            arm1,
            arm2: SecondArm::Focused(arm2),
            peak_rabi,
        }
    }

    /// Double-side system with the same profile in both arms.
    pub fn symmetric(profile: BeamProfile, peak_rabi: f64) -> Self {
        Self::double_side(profile.clone(), profile, peak_rabi)
    }

    pub fn with_mode(profile: BeamProfile, mode: AddressingMode, peak_rabi: f64) -> Self {
        match mode {
            AddressingMode::SingleSide => Self::single_side(profile, peak_rabi),
            AddressingMode::DoubleSide => Self::symmetric(profile, peak_rabi),
        }
    }

    pub fn mode(&self) -> AddressingMode {
        match self.arm2 {
            SecondArm::Uniform => AddressingMode::SingleSide,
            SecondArm::Focused(_) => AddressingMode::DoubleSide,
        }
    }

    /// Intensity ratio `I(x)/I(x_ref)` of one arm.
    fn arm_ratio(profile: &BeamProfile, x: f64, x_ref: f64) -> Result<f64> {
        let reference = profile.intensity_at(x_ref);
        if !(reference > 0.0) {
            return Err(Error::Normalization { position_um: x_ref });
        }
        Ok(profile.intensity_at(x) / reference)
    }

    /// Per-arm intensity ratios; the uniform arm contributes exactly 1.
    pub fn intensity_ratios(&self, x: f64, ref1: f64, ref2: f64) -> Result<(f64, f64)> {
        let r1 = Self::arm_ratio(&self.arm1, x, ref1)?;
        let r2 = match &self.arm2 {
            SecondArm::Uniform => 1.0,
            SecondArm::Focused(p) => Self::arm_ratio(p, x, ref2)?,
        };
        Ok((r1, r2))
    }

    /// Rabi rate at `x` relative to the rate at the reference sites, with
    /// each arm normalized at its own reference position.
    pub fn relative_rate_split(&self, x: f64, ref1: f64, ref2: f64) -> Result<f64> {
        let (r1, r2) = self.intensity_ratios(x, ref1, ref2)?;
        Ok(r1.sqrt() * r2.sqrt())
    }

    pub fn relative_rate(&self, x: f64, x_addressed: f64) -> Result<f64> {
        self.relative_rate_split(x, x_addressed, x_addressed)
    }

    pub fn rabi_rate_at(&self, x: f64, x_addressed: f64) -> Result<f64> {
        Ok(self.peak_rabi * self.relative_rate(x, x_addressed)?)
    }

    /// Ω(neighbor)/Ω(addressed) for this system.
    pub fn crosstalk_ratio(&self, x_neighbor: f64, x_addressed: f64) -> Result<f64> {
        self.relative_rate(x_neighbor, x_addressed)
    }
}

/// Which addressed-ion rate a measured victim rate is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the victim's own rate when it is the addressed ion.
    #[default]
    Victim,
    /// Divide by the rate of the ion currently being addressed.
    Addressed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFigures {
    pub addressed: usize,
    pub victim: usize,
    pub intensity_ratio_arm1: f64,
    /// 1 for a uniform second arm.
    pub intensity_ratio_arm2: f64,
    pub rabi_ratio: f64,
}

/// Entry `(i, j)` is the crosstalk ratio at ion `j` while ion `i` is addressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkMatrix {
    pub labels: Vec<String>,
    pub entries: Vec<Vec<f64>>,
    pub pairs: Vec<PairFigures>,
}

impl CrosstalkMatrix {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, addressed: usize, victim: usize) -> f64 {
        self.entries[addressed][victim]
    }

    /// Rows are addressed ions, columns are victims.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("addressed_ion");
        for label in &self.labels {
            let _ = write!(out, ",victim_{label}_rabi_ratio");
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.entries) {
            out.push_str(label);
            for v in row {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the crosstalk matrix, one addressing system per addressed ion.
pub fn crosstalk_matrix<F>(build: F, chain: &IonChain) -> Result<CrosstalkMatrix>
where
    F: Fn(usize, &IonChain) -> Result<AddressingSystem>,
{
    if chain.is_empty() {
        return Err(Error::Domain("crosstalk matrix needs at least one ion".into()));
    }
    let n = chain.len();
    let mut entries = vec![vec![0.0; n]; n];
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        let wrap = |victim: usize, e: Error| Error::MatrixEntry {
            addressed: i,
            victim,
            source: Box::new(e),
        };
        let system = build(i, chain).map_err(|e| wrap(i, e))?;
        let x0 = chain.positions_um[i];
        for j in 0..n {
            if i == j {
                entries[i][j] = 1.0;
                continue;
            }
            let xj = chain.positions_um[j];
            let (r1, r2) = system.intensity_ratios(xj, x0, x0).map_err(|e| wrap(j, e))?;
            let ratio = r1.sqrt() * r2.sqrt();
            entries[i][j] = ratio;
            pairs.push(PairFigures {
                addressed: i,
                victim: j,
                intensity_ratio_arm1: r1,
                intensity_ratio_arm2: r2,
                rabi_ratio: ratio,
            });
        }
    }
    Ok(CrosstalkMatrix {
        labels: (0..n).map(|i| chain.label(i)).collect(),
        entries,
        pairs,
    })
}

/// Intensity crosstalk and the Rabi crosstalk it implies in each mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub intensity_crosstalk: f64,
    pub rabi_crosstalk_ssa: f64,
    pub rabi_crosstalk_dsa: f64,
}

impl ModeComparison {
    pub fn from_intensity_crosstalk(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(invalid("intensity_crosstalk", format!("must be finite and >= 0, got {epsilon}")));
        }
        let ssa = epsilon.sqrt();
        debug_assert!((ssa * ssa - epsilon).abs() <= 4.0 * f64::EPSILON * epsilon);
        Ok(Self {
            intensity_crosstalk: epsilon,
            rabi_crosstalk_ssa: ssa,
            rabi_crosstalk_dsa: epsilon,
        })
    }
}

pub fn compare_ssa_dsa(profile: &BeamProfile, x_addressed: f64, x_neighbor: f64) -> Result<ModeComparison> {
    let reference = profile.intensity_at(x_addressed);
    if !(reference > 0.0) {
        return Err(Error::Normalization {
            position_um: x_addressed,
        });
    }
    ModeComparison::from_intensity_crosstalk(profile.intensity_at(x_neighbor) / reference)
}

/// Published individual-addressing systems, for side-by-side reports.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReferenceSystem {
    pub name: &'static str,
    pub numerical_aperture: &'static str,
    pub intensity_crosstalk: f64,
    pub rabi_crosstalk: &'static str,
    pub ion_spacing_um: f64,
}

pub const REFERENCE_SYSTEMS: [ReferenceSystem; 5] = [
    ReferenceSystem {
        name: "MCAOMs",
        numerical_aperture: "0.37",
        intensity_crosstalk: 1e-4,
        rabi_crosstalk: "1%-2%",
        ion_spacing_um: 5.0,
    },
    ReferenceSystem {
        name: "GLIAS",
        numerical_aperture: "0.37",
        intensity_crosstalk: 1e-4,
        rabi_crosstalk: "1% (estimate)",
        ion_spacing_um: 4.0,
    },
    ReferenceSystem {
        name: "AODs (single-side)",
        numerical_aperture: "0.6",
        intensity_crosstalk: 4e-6,
        rabi_crosstalk: "0.2%",
        ion_spacing_um: 3.5,
    },
    ReferenceSystem {
        name: "MEMS",
        numerical_aperture: "0.6",
        intensity_crosstalk: 4e-6,
        rabi_crosstalk: "0.2%-0.6%",
        ion_spacing_um: 5.0,
    },
    ReferenceSystem {
        name: "AODs (double-side)",
        numerical_aperture: "0.37x2",
        intensity_crosstalk: 1e-3,
        rabi_crosstalk: "0.06%-0.1%",
        ion_spacing_um: 5.5,
    },
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::GaussianSpot;
    use approx::assert_relative_eq;

    const W: f64 = 0.95;

    fn stray_profile(center: f64, neighbor_offset: f64, ratio: f64) -> BeamProfile {
        BeamProfile::with_stray(
            vec![GaussianSpot::new(1.0, center, W).unwrap()],
            vec![GaussianSpot::new(ratio, center + neighbor_offset, W).unwrap()],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn self_normalization() {
        let p = stray_profile(0.0, 5.5, 1e-3);
        for sys in [
            AddressingSystem::single_side(p.clone(), 7.0),
            AddressingSystem::symmetric(p.clone(), 7.0),
        ] {
            assert_eq!(sys.rabi_rate_at(0.0, 0.0).unwrap(), 7.0);
            assert_eq!(sys.crosstalk_ratio(0.0, 0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn square_root_versus_linear() {
        let p = stray_profile(0.0, 5.5, 1e-3);
        let eps = p.intensity_at(5.5) / p.intensity_at(0.0);
        let dsa = AddressingSystem::symmetric(p.clone(), 1.0);
        let ssa = AddressingSystem::single_side(p, 1.0);
        assert_relative_eq!(dsa.rabi_rate_at(5.5, 0.0).unwrap(), eps, max_relative = 1e-14);
        assert_relative_eq!(dsa.rabi_rate_at(5.5, 0.0).unwrap(), 1e-3, max_relative = 1e-9);
        assert_relative_eq!(ssa.rabi_rate_at(5.5, 0.0).unwrap(), 0.0316, epsilon = 1e-4);
    }

    #[test]
    fn table_rows() {
        let c = ModeComparison::from_intensity_crosstalk(4e-6).unwrap();
        assert_relative_eq!(c.rabi_crosstalk_dsa, 4e-6, max_relative = 1e-15);
        assert_relative_eq!(c.rabi_crosstalk_ssa, 2e-3, max_relative = 1e-15);
        let c = ModeComparison::from_intensity_crosstalk(1e-4).unwrap();
        assert_relative_eq!(c.rabi_crosstalk_ssa, 1e-2, max_relative = 1e-15);
        let c = ModeComparison::from_intensity_crosstalk(1.0).unwrap();
        assert_eq!((c.intensity_crosstalk, c.rabi_crosstalk_ssa, c.rabi_crosstalk_dsa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn unequal_arms_geometric_mean() {
        let sys = AddressingSystem::double_side(
            stray_profile(0.0, 5.5, 1e-3),
            stray_profile(0.0, 5.5, 4e-3),
            1.0,
        );
        assert_relative_eq!(sys.crosstalk_ratio(5.5, 0.0).unwrap(), 2e-3, max_relative = 1e-9);
    }

    #[test]
    fn zero_reference_intensity() {
        let p = BeamProfile::new(vec![]).unwrap();
        let sys = AddressingSystem::single_side(p, 1.0);
        assert!(matches!(sys.rabi_rate_at(1.0, 0.0), Err(Error::Normalization { .. })));
    }

    #[test]
    fn compare_with_calibrated_stray() {
        let p = stray_profile(0.0, 5.5, 1e-3);
        let c = compare_ssa_dsa(&p, 0.0, 5.5).unwrap();
        assert_relative_eq!(c.intensity_crosstalk, 1e-3, max_relative = 1e-9);
        assert_relative_eq!(c.rabi_crosstalk_dsa, 1e-3, max_relative = 1e-9);
        assert_relative_eq!(c.rabi_crosstalk_ssa, 0.0316, epsilon = 1e-4);
    }

    #[test]
    fn matrix_shapes() {
        let one = IonChain::new(vec![0.0]).unwrap();
        let m = crosstalk_matrix(|_, _| Ok(AddressingSystem::symmetric(stray_profile(0.0, 5.5, 1e-3), 1.0)), &one)
            .unwrap();
        assert_eq!(m.entries, vec![vec![1.0]]);

        let two = IonChain::evenly_spaced(2, 5.5).unwrap();
        let build = |i: usize, c: &IonChain| {
            let x = c.positions_um[i];
            let p = BeamProfile::with_stray(
                vec![GaussianSpot::new(1.0, x, W)?],
                vec![GaussianSpot::new(1e-3, x - 5.5, W)?, GaussianSpot::new(1e-3, x + 5.5, W)?],
                0.0,
            )?;
            Ok(AddressingSystem::symmetric(p, 1.0))
        };
        let m = crosstalk_matrix(build, &two).unwrap();
        assert_relative_eq!(m.get(0, 1), 1e-3, max_relative = 1e-9);
        assert_relative_eq!(m.get(1, 0), 1e-3, max_relative = 1e-9);
        assert_eq!(m.pairs.len(), 2);
        let csv = m.to_csv();
        assert!(csv.starts_with("addressed_ion,victim_ion0_rabi_ratio,victim_ion1_rabi_ratio\n"));
    }

    #[test]
    fn matrix_error_context() {
        let chain = IonChain::evenly_spaced(2, 5.5).unwrap();
        let err = crosstalk_matrix(
            |_, _| Ok(AddressingSystem::single_side(BeamProfile::single(1.0, 0.0, 0.1).unwrap(), 1.0)),
            &chain,
        )
        .unwrap_err();
        // addressing ion 1 at 5.5 um normalizes against a beam parked at 0
        // whose tail underflows there.
        assert!(matches!(err, Error::MatrixEntry { addressed: 1, .. }), "{err}");
    }

    #[test]
    fn chain_validation() {
        assert!(IonChain::new(vec![0.0, 0.0]).is_err());
        assert!(IonChain::new(vec![1.0, 0.0]).is_err());
        assert!(IonChain::new(vec![0.0, 1.0]).unwrap().with_labels(vec!["A".into()]).is_err());
        let c = IonChain::new(vec![0.0, 1.0]).unwrap().with_rabi_rates(vec![2.0, 3.0]).unwrap();
        assert_eq!(c.rabi_rate(1, 9.0), 3.0);
    }
}
