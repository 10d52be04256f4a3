use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{self, LeastSquares, LmSettings};
use crate::error::{invalid, Error, Result};

/// Minimum number of samples for a flopping fit.
const MIN_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiFit {
    /// rad/s
    pub omega: f64,
    /// Contrast decay rate, 1/s.
    pub decay_rate: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RabiFit {
    /// Full Rabi cycle, seconds.
    pub fn period_s(&self) -> f64 {
        TAU / self.omega
    }
}

/// `½(1 − e^{−g·s}·cos(w·s))` on time scaled by the last sample time.
struct Flopping<'a> {
    data: &'a [(f64, f64)],
}

impl LeastSquares for Flopping<'_> {
    fn n_params(&self) -> usize {
        2
    }

    fn n_residuals(&self) -> usize {
        self.data.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, &(s, y)) in self.data.iter().enumerate() {
            out[i] = 0.5 * (1.0 - (-p[1] * s).exp() * (p[0] * s).cos()) - y;
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for (i, &(s, _)) in self.data.iter().enumerate() {
            let e = (-p[1] * s).exp();
            jac[(i, 0)] = 0.5 * e * s * (p[0] * s).sin();
            jac[(i, 1)] = 0.5 * e * s * (p[0] * s).cos();
        }
    }

    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].abs();
        p[1] = p[1].max(0.0);
    }
}

/// Angular frequencies (scaled units) of the strongest periodogram maxima
/// of `1 − 2P`, strongest first.
fn periodogram_candidates(scaled: &[(f64, f64)], count: usize) -> Vec<f64> {
    let n = scaled.len();
    let span = scaled[n - 1].0 - scaled[0].0;
    let step = 1.0 / (8.0 * span);
    let nyquist = (n - 1) as f64 / (2.0 * span);
    let grid: Vec<f64> = (1..)
        .map(|k| k as f64 * step)
        .take_while(|&f| f <= nyquist.max(step))
        .collect();
    let power: Vec<f64> = grid
        .iter()
        .map(|&f| {
            let w = TAU * f;
            let (re, im) = scaled.iter().fold((0.0, 0.0), |(re, im), &(s, p)| {
                let y = 1.0 - 2.0 * p;
                (re + y * (w * s).cos(), im - y * (w * s).sin())
            });
            re * re + im * im
        })
        .collect();
    let mut maxima: Vec<usize> = (0..power.len())
        .filter(|&k| {
            (k == 0 || power[k] > power[k - 1]) && (k + 1 == power.len() || power[k] >= power[k + 1])
        })
        .collect();
    maxima.sort_by(|&a, &b| power[b].total_cmp(&power[a]));
    maxima.into_iter().take(count).map(|k| TAU * grid[k]).collect()
}

/// Fits `P(t) = ½(1 − e^{−γt} cos Ωt)` to `(t [s], P)` samples.
///
/// Without `init_omega` the search starts from the strongest periodogram
/// peaks of `1 − 2P`. Data covering less than half a Rabi cycle cannot fix
/// the frequency and is rejected in favour of [`extract_slow_rabi`].
pub fn fit_rabi_flopping(data: &[(f64, f64)], init_omega: Option<f64>) -> Result<RabiFit> {
    if data.len() < MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points; a flopping fit needs at least {MIN_POINTS}",
            data.len()
        )));
    }
    if data
        .iter()
        .any(|&(t, p)| !(t.is_finite() && t >= 0.0 && p.is_finite()))
    {
        return Err(Error::Domain("times must be finite and >= 0, probabilities finite".into()));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let t_first = sorted[0].0;
    let t_last = sorted[sorted.len() - 1].0;
    let span = t_last - t_first;
    if !(span > 0.0) {
        return Err(Error::Domain("samples must cover a nonzero time span".into()));
    }
    let (lo, hi) = sorted
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, p)| (lo.min(p), hi.max(p)));
    if hi - lo < 1e-12 {
        return Err(Error::AmbiguousRabi("excitation is constant across the samples".into()));
    }

    let scale = t_last;
    let scaled: Vec<(f64, f64)> = sorted.iter().map(|&(t, p)| (t / scale, p)).collect();
    let starts: Vec<f64> = match init_omega {
        Some(w) if w > 0.0 && w.is_finite() => vec![w * scale],
        Some(w) => return Err(invalid("init_omega", format!("must be > 0, got {w}"))),
        None => periodogram_candidates(&scaled, 3),
    };

    let problem = Flopping { data: &scaled };
    let settings = LmSettings {
        max_iterations: 500,
        tolerance: 1e-12,
    };
    let best = starts
        .iter()
        .map(|&w0| lm::minimize(&problem, &[w0, 0.0], settings))
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .ok_or_else(|| Error::AmbiguousRabi("no frequency candidates in the data".into()))?;

    let omega = best.params[0] / scale;
    if omega * span < PI {
        return Err(Error::AmbiguousRabi(format!(
            "fitted rate {omega:.4e} rad/s covers less than half a cycle over {span:.4e} s"
        )));
    }
    Ok(RabiFit {
        omega,
        decay_rate: best.params[1] / scale,
        residual_norm: best.cost.sqrt(),
        iterations: best.iterations,
        converged: best.converged,
    })
}

/// Rabi rate from the excitation reached after `t_s` seconds, assuming
/// the ion has not passed half a cycle (Ωt ≤ π): `arccos(1 − 2P)/t`.
pub fn extract_slow_rabi(p_final: f64, t_s: f64) -> Result<f64> {
    if !(t_s > 0.0 && t_s.is_finite()) {
        return Err(Error::Domain(format!("interaction time must be > 0, got {t_s}")));
    }
    if !(0.0..=1.0).contains(&p_final) {
        return Err(Error::Domain(format!("probability {p_final} outside [0, 1]")));
    }
    // arccos(1 − 2P) written through arcsin so neither end loses precision.
    let angle = if p_final <= 0.5 {
        2.0 * p_final.sqrt().asin()
    } else {
        PI - 2.0 * (1.0 - p_final).sqrt().asin()
    };
    debug_assert!((0.0..=PI).contains(&angle) || (angle - FRAC_PI_2 * 2.0).abs() < 1e-15);
    Ok(angle / t_s)
}

/// Victim Rabi rate inferred from its final excitation, divided by a
/// reference (addressed) rate.
pub fn rabi_crosstalk(p_final_victim: f64, t_s: f64, omega_reference: f64) -> Result<f64> {
    if !(omega_reference > 0.0 && omega_reference.is_finite()) {
        return Err(Error::Domain(format!(
            "reference rate must be > 0, got {omega_reference}"
        )));
    }
    Ok(extract_slow_rabi(p_final_victim, t_s)? / omega_reference)
}
