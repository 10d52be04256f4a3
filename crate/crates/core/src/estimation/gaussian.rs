use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{self, LeastSquares, LmSettings};
use crate::aod::AodChannel;
use crate::error::{Error, Result};
use crate::optics::GaussianSpot;

/// FWHM → 1/e² waist for `exp(-2(x/w)²)`: `1/√(2 ln 2)`.
pub const FWHM_TO_WAIST: f64 = 0.849_321_800_288_019;

/// Peaks must clear the median by this many median absolute deviations.
const PEAK_MAD_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-9,
        }
    }
}

/// Residual sensitivity of each parameter: `√(s² / (JᵀJ)ᵢᵢ)` with
/// `s² = SSR/(m − n)`. A covariance-free uncertainty proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotSensitivity {
    pub amplitude: f64,
    pub center: f64,
    pub waist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Sorted by center.
    pub spots: Vec<GaussianSpot>,
    pub sensitivities: Vec<SpotSensitivity>,
    /// √(sum of squared residuals)
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub position: f64,
    pub height: f64,
    pub fwhm: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn crossing(x0: f64, y0: f64, x1: f64, y1: f64, level: f64) -> f64 {
    if y1 == y0 {
        return 0.5 * (x0 + x1);
    }
    x0 + (level - y0) * (x1 - x0) / (y1 - y0)
}

fn full_width_half_max(data: &[(f64, f64)], k: usize, baseline: f64) -> Option<f64> {
    let half = baseline + 0.5 * (data[k].1 - baseline);
    let left = (1..=k).rev().find(|&i| data[i - 1].1 <= half).map(|i| {
        let (x0, y0) = data[i - 1];
        let (x1, y1) = data[i];
        data[k].0 - crossing(x0, y0, x1, y1, half)
    });
    let right = (k..data.len() - 1).find(|&i| data[i + 1].1 <= half).map(|i| {
        let (x0, y0) = data[i];
        let (x1, y1) = data[i + 1];
        crossing(x0, y0, x1, y1, half) - data[k].0
    });
    match (left, right) {
        (Some(l), Some(r)) => Some(l + r),
        (Some(h), None) | (None, Some(h)) => Some(2.0 * h),
        (None, None) => None,
    }
}

/// Local maxima standing more than 5 MAD above the median, strongest first,
/// with weaker maxima inside a stronger peak's FWHM suppressed.
///
/// `data` must be sorted by position.
pub fn detect_peaks(data: &[(f64, f64)]) -> Vec<Peak> {
    let n = data.len();
    if n < 3 {
        return Vec::new();
    }
    let mut ys: Vec<f64> = data.iter().map(|d| d.1).collect();
    let baseline = median(&mut ys);
    let mut deviations: Vec<f64> = data.iter().map(|d| (d.1 - baseline).abs()).collect();
    let mad = median(&mut deviations);
    let threshold = baseline + PEAK_MAD_FACTOR * mad;
    let span = data[n - 1].0 - data[0].0;

    let mut candidates: Vec<Peak> = (0..n)
        .filter(|&k| {
            let y = data[k].1;
            let left_ok = k == 0 || y > data[k - 1].1;
            let right_ok = k == n - 1 || y >= data[k + 1].1;
            left_ok && right_ok && y > threshold && y > baseline
        })
        .map(|k| Peak {
            index: k,
            position: data[k].0,
            height: data[k].1,
            fwhm: full_width_half_max(data, k, baseline).unwrap_or(span / 4.0),
        })
        .collect();
    candidates.sort_by(|a, b| b.height.total_cmp(&a.height).then(a.index.cmp(&b.index)));

    let mut accepted: Vec<Peak> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|a| (c.position - a.position).abs() >= a.fwhm) {
            accepted.push(c);
        }
    }
    accepted
}

fn initial_spots(data: &[(f64, f64)], n_spots: usize) -> Vec<GaussianSpot> {
    let span = data[data.len() - 1].0 - data[0].0;
    let mut spots: Vec<GaussianSpot> = detect_peaks(data)
        .into_iter()
        .take(n_spots)
        .map(|p| GaussianSpot {
            amplitude: p.height.max(0.0),
            center: p.position,
            waist: (p.fwhm * FWHM_TO_WAIST).max(span * 1e-6),
        })
        .collect();
    let fallback_waist = if spots.is_empty() {
        span / (4.0 * n_spots as f64)
    } else {
        spots.iter().map(|s| s.waist).sum::<f64>() / spots.len() as f64
    };
    // Remaining spots go where the seeded model leaves the most signal.
    while spots.len() < n_spots {
        let (x, residual) = data
            .iter()
            .filter(|(x, _)| spots.iter().all(|s| (x - s.center).abs() >= s.waist))
            .map(|&(x, y)| (x, y - spots.iter().map(|s| s.intensity(x)).sum::<f64>()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or_else(|| {
                let k = spots.len() + 1;
                (data[0].0 + span * k as f64 / (n_spots + 1) as f64, 0.0)
            });
        spots.push(GaussianSpot {
            amplitude: residual.max(0.0),
            center: x,
            waist: fallback_waist,
        });
    }
    spots
}

struct MultiGaussian<'a> {
    data: &'a [(f64, f64)],
    n_spots: usize,
    min_waist: f64,
}

impl LeastSquares for MultiGaussian<'_> {
    fn n_params(&self) -> usize {
        3 * self.n_spots
    }

    fn n_residuals(&self) -> usize {
        self.data.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, &(x, y)) in self.data.iter().enumerate() {
            let model: f64 = p
                .chunks_exact(3)
                .map(|s| {
                    let u = (x - s[1]) / s[2];
                    s[0] * (-2.0 * u * u).exp()
                })
                .sum();
            out[i] = model - y;
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for (i, &(x, _)) in self.data.iter().enumerate() {
            for (k, s) in p.chunks_exact(3).enumerate() {
                let (a, c, w) = (s[0], s[1], s[2]);
                let u = (x - c) / w;
                let e = (-2.0 * u * u).exp();
                jac[(i, 3 * k)] = e;
                jac[(i, 3 * k + 1)] = a * e * 4.0 * u / w;
                jac[(i, 3 * k + 2)] = a * e * 4.0 * u * u / w;
            }
        }
    }

    fn project(&self, p: &mut [f64]) {
        for s in p.chunks_exact_mut(3) {
            s[0] = s[0].max(0.0);
            s[2] = s[2].max(self.min_waist);
        }
    }
}

/// Least-squares fit of `Σ Aᵢ exp(-2((x − xᵢ)/wᵢ)²)` with `n_spots` terms.
pub fn fit_multi_gaussian(
    data: &[(f64, f64)],
    n_spots: usize,
    init: Option<&[GaussianSpot]>,
) -> Result<FitResult> {
    fit_multi_gaussian_with(data, n_spots, init, &FitOptions::default())
}

pub fn fit_multi_gaussian_with(
    data: &[(f64, f64)],
    n_spots: usize,
    init: Option<&[GaussianSpot]>,
    options: &FitOptions,
) -> Result<FitResult> {
    if n_spots == 0 {
        return Err(Error::Domain("n_spots must be >= 1".into()));
    }
    if data.len() < 3 * n_spots {
        return Err(Error::InsufficientData(format!(
            "{} points cannot constrain {} spots (need {})",
            data.len(),
            n_spots,
            3 * n_spots
        )));
    }
    if data.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Domain("data contains non-finite values".into()));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|w| w[1].0 == w[0].0) {
        return Err(Error::Domain("x values must be distinct".into()));
    }

    let seeds = match init {
        Some(spots) if spots.len() != n_spots => {
            return Err(Error::Domain(format!(
                "initialization has {} spots, expected {n_spots}",
                spots.len()
            )))
        }
        Some(spots) => spots.to_vec(),
        None => initial_spots(&sorted, n_spots),
    };
    let span = sorted[sorted.len() - 1].0 - sorted[0].0;
    let problem = MultiGaussian {
        data: &sorted,
        n_spots,
        min_waist: span * 1e-9,
    };
    let start: Vec<f64> = seeds
        .iter()
        .flat_map(|s| [s.amplitude, s.center, s.waist])
        .collect();
    let outcome = lm::minimize(
        &problem,
        &start,
        LmSettings {
            max_iterations: options.max_iterations,
            tolerance: options.tolerance,
        },
    );

    let dof = (sorted.len() - 3 * n_spots).max(1) as f64;
    let s2 = outcome.cost / dof;
    let sensitivity = |k: usize| (s2 / outcome.jtj_diagonal[k]).sqrt();
    let mut fitted: Vec<(GaussianSpot, SpotSensitivity)> = outcome
        .params
        .chunks_exact(3)
        .enumerate()
        .map(|(k, s)| {
            (
                GaussianSpot {
                    amplitude: s[0],
                    center: s[1],
                    waist: s[2],
                },
                SpotSensitivity {
                    amplitude: sensitivity(3 * k),
                    center: sensitivity(3 * k + 1),
                    waist: sensitivity(3 * k + 2),
                },
            )
        })
        .collect();
    fitted.sort_by(|a, b| a.0.center.total_cmp(&b.0.center));
    let (spots, sensitivities) = fitted.into_iter().unzip();

    Ok(FitResult {
        spots,
        sensitivities,
        residual_norm: outcome.cost.sqrt(),
        initial_residual_norm: outcome.initial_cost.sqrt(),
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingAndWaist {
    /// Differences of adjacent fitted centers; empty for a single spot.
    pub spacings: Vec<f64>,
    pub mean_waist: f64,
}

impl SpacingAndWaist {
    pub fn mean_spacing(&self) -> Option<f64> {
        if self.spacings.is_empty() {
            None
        } else {
            Some(self.spacings.iter().sum::<f64>() / self.spacings.len() as f64)
        }
    }
}

pub fn extract_spacing_and_waist(fit: &FitResult) -> Result<SpacingAndWaist> {
    if fit.spots.is_empty() {
        return Err(Error::Domain("fit has no spots".into()));
    }
    let mut centers: Vec<f64> = fit.spots.iter().map(|s| s.center).collect();
    centers.sort_by(f64::total_cmp);
    Ok(SpacingAndWaist {
        spacings: centers.windows(2).map(|w| w[1] - w[0]).collect(),
        mean_waist: fit.spots.iter().map(|s| s.waist).sum::<f64>() / fit.spots.len() as f64,
    })
}

/// Width of a Gaussian fitted to excitation-versus-frequency data, in
/// both readings of the response.
///
/// `direct_um` takes the fitted width as the optical waist. If the
/// excitation instead scales as intensity squared, the fitted width is
/// `w/√2` and `intensity_squared_um` is the implied waist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanWaist {
    pub fitted_mhz: f64,
    pub direct_um: f64,
    pub intensity_squared_um: f64,
}

impl ScanWaist {
    pub fn from_fit(fitted_mhz: f64, channel: &AodChannel) -> Self {
        let direct_um = fitted_mhz * channel.position_coefficient_um_per_mhz.abs();
        Self {
            fitted_mhz,
            direct_um,
            intensity_squared_um: direct_um * std::f64::consts::SQRT_2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(spots: &[GaussianSpot], lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                (x, spots.iter().map(|s| s.intensity(x)).sum())
            })
            .collect()
    }

    #[test]
    fn fwhm_factor() {
        assert_relative_eq!(FWHM_TO_WAIST, 1.0 / (2.0 * 2f64.ln()).sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn single_spot_round_trip() {
        let truth = GaussianSpot::new(1.0, 2.0, 0.95).unwrap();
        let data = sample(&[truth], -2.0, 6.0, 161);
        let fit = fit_multi_gaussian(&data, 1, None).unwrap();
        assert!(fit.converged);
        let s = fit.spots[0];
        assert_relative_eq!(s.amplitude, 1.0, max_relative = 1e-6);
        assert_relative_eq!(s.center, 2.0, max_relative = 1e-6);
        assert_relative_eq!(s.waist, 0.95, max_relative = 1e-6);
        assert!(fit.residual_norm <= fit.initial_residual_norm);
    }

    #[test]
    fn zero_data_gives_zero_amplitude() {
        let data: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.1, 0.0)).collect();
        let fit = fit_multi_gaussian(&data, 1, None).unwrap();
        assert!(fit.converged);
        assert!(fit.spots[0].amplitude.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let data = vec![(0.0, 1.0), (1.0, 2.0)];
        assert!(matches!(fit_multi_gaussian(&data, 1, None), Err(Error::InsufficientData(_))));
        let dup = vec![(0.0, 1.0), (0.0, 2.0), (1.0, 0.0)];
        assert!(matches!(fit_multi_gaussian(&dup, 1, None), Err(Error::Domain(_))));
        let ok = vec![(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)];
        assert!(fit_multi_gaussian(&ok, 0, None).is_err());
        let init = [GaussianSpot::new(1.0, 0.0, 1.0).unwrap(); 2];
        assert!(fit_multi_gaussian(&ok, 1, Some(&init)).is_err());
    }

    #[test]
    fn peaks_ranked_and_suppressed() {
        let spots = [
            GaussianSpot::new(0.74, 5.5, 0.95).unwrap(),
            GaussianSpot::new(1.0, 0.0, 0.95).unwrap(),
        ];
        let data = sample(&spots, -3.0, 8.5, 231);
        let peaks = detect_peaks(&data);
        assert_eq!(peaks.len(), 2);
        assert!(peaks[0].position.abs() < 0.06);
        assert!((peaks[1].position - 5.5).abs() < 0.06);
        assert_relative_eq!(peaks[0].fwhm * FWHM_TO_WAIST, 0.95, max_relative = 0.02);
    }

    #[test]
    fn spacing_and_waist() {
        let fit = |centers: &[f64], waists: &[f64]| FitResult {
            spots: centers
                .iter()
                .zip(waists)
                .map(|(&c, &w)| GaussianSpot::new(1.0, c, w).unwrap())
                .collect(),
            sensitivities: vec![],
            residual_norm: 0.0,
            initial_residual_norm: 0.0,
            iterations: 0,
            converged: true,
        };
        let r = extract_spacing_and_waist(&fit(&[0.0, 5.5], &[0.95, 0.95])).unwrap();
        assert_eq!(r.spacings, vec![5.5]);
        assert_eq!(r.mean_waist, 0.95);
        let r = extract_spacing_and_waist(&fit(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(r.spacings, vec![1.0, 1.0]);
        let r = extract_spacing_and_waist(&fit(&[0.0], &[0.9])).unwrap();
        assert_eq!(r.mean_spacing(), None);
        let r = extract_spacing_and_waist(&fit(&[0.0, 3.0], &[0.9, 1.0])).unwrap();
        assert_relative_eq!(r.mean_waist, 0.95, max_relative = 1e-15);
    }

    #[test]
    fn scan_waist_readings() {
        let ch = AodChannel::calibrate(77.5, (77.07, 0.0), (78.03, 5.5), 0.95).unwrap();
        let w = ScanWaist::from_fit(0.95 / ch.position_coefficient_um_per_mhz, &ch);
        assert_relative_eq!(w.direct_um, 0.95, max_relative = 1e-12);
        assert_relative_eq!(w.intensity_squared_um, 0.95 * 2f64.sqrt(), max_relative = 1e-12);
    }
}
