use std::f64::consts::{PI, TAU};

use approx::assert_relative_eq;
use ionaddr::aod::{AodChannel, GhostSpots};
use ionaddr::crosstalk::{AddressingSystem, IonChain};
use ionaddr::dynamics::{
    excitation_probability, frequency_scan, time_scan, ArmDrive, DecayModel, ScanArms, ScanTemplate,
    SequenceTiming, ShotSampler,
};
use ionaddr::estimation::{
    extract_slow_rabi, extract_spacing_and_waist, fit_multi_gaussian, fit_rabi_flopping,
};
use ionaddr::optics::{BeamProfile, GaussianSpot};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn two_ion_template() -> ScanTemplate {
    let ch = AodChannel::calibrate(77.5, (77.07, 0.0), (78.03, 5.5), 0.95).unwrap();
    let arm = ArmDrive::new(ch).with_stray(GhostSpots {
        offsets_um: vec![-5.5, 5.5],
        relative_amplitude: 1e-3,
        waist_um: None,
    });
    ScanTemplate {
        arm1: arm.clone(),
        arm2: Some(arm),
        scan_arms: ScanArms::Both,
        peak_rabi: 0.0,
    }
}

fn two_ion_chain() -> IonChain {
    IonChain::new(vec![0.0, 5.5])
        .unwrap()
        .with_rabi_rates(vec![TAU * 43.78e3, TAU * 32.42e3])
        .unwrap()
}

fn timing(shots: u64) -> SequenceTiming {
    SequenceTiming {
        repetitions: shots,
        ..SequenceTiming::default()
    }
}

fn sample(spots: &[GaussianSpot], lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (x, spots.iter().map(|s| s.intensity(x)).sum())
        })
        .collect()
}

fn two_spots() -> impl Strategy<Value = [GaussianSpot; 2]> {
    (0.3..2.0f64, 0.3..2.0f64, -1.0..1.0f64, 4.0..7.0f64, 0.6..1.4f64, 0.6..1.4f64).prop_map(
        |(a1, a2, c1, sep, w1, w2)| {
            [
                GaussianSpot::new(a1, c1, w1).unwrap(),
                GaussianSpot::new(a2, c1 + sep, w2).unwrap(),
            ]
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inversion_round_trip(omega in 1.0..1e6f64, frac in 1e-9..0.999f64) {
        let t = frac * PI / omega;
        let p = excitation_probability(omega, t, DecayModel::NONE);
        let back = extract_slow_rabi(p, t).unwrap();
        prop_assert!((back - omega).abs() <= 1e-12 * omega, "{} vs {}", back, omega);
    }

    #[test]
    fn probability_is_bounded(omega in 0.0..1e6f64, t in 0.0..1e-2f64, g in 0.0..1e4f64) {
        let p = excitation_probability(omega, t, DecayModel::new(g).unwrap());
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn two_spot_fit_round_trip(truth in two_spots()) {
        let data = sample(&truth, -4.0, 12.0, 321);
        let fit = fit_multi_gaussian(&data, 2, None).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(fit.residual_norm <= fit.initial_residual_norm);
        for (f, t) in fit.spots.iter().zip(&truth) {
            prop_assert!((f.amplitude - t.amplitude).abs() <= 1e-6 * t.amplitude);
            prop_assert!((f.center - t.center).abs() <= 1e-6 * t.center.abs().max(1.0));
            prop_assert!((f.waist - t.waist).abs() <= 1e-6 * t.waist);
        }
    }

    #[test]
    fn fit_tolerates_perturbed_start(truth in two_spots(), k in prop::array::uniform6(-0.1..0.1f64)) {
        let data = sample(&truth, -4.0, 12.0, 321);
        let init: Vec<GaussianSpot> = truth
            .iter()
            .enumerate()
            .map(|(i, s)| GaussianSpot {
                amplitude: s.amplitude * (1.0 + k[3 * i]),
                center: s.center + k[3 * i + 1] * s.waist,
                waist: s.waist * (1.0 + k[3 * i + 2]),
            })
            .collect();
        let fit = fit_multi_gaussian(&data, 2, Some(&init)).unwrap();
        for (f, t) in fit.spots.iter().zip(&truth) {
            prop_assert!((f.center - t.center).abs() <= 1e-6 * t.center.abs().max(1.0));
            prop_assert!((f.waist - t.waist).abs() <= 1e-6 * t.waist);
        }
    }

    #[test]
    fn fit_ignores_init_order(truth in two_spots()) {
        let data = sample(&truth, -4.0, 12.0, 321);
        let fwd = fit_multi_gaussian(&data, 2, Some(&truth)).unwrap();
        let rev = [truth[1], truth[0]];
        let bwd = fit_multi_gaussian(&data, 2, Some(&rev)).unwrap();
        for (a, b) in fwd.spots.iter().zip(&bwd.spots) {
            prop_assert!((a.center - b.center).abs() <= 1e-9);
        }
    }

    #[test]
    fn shot_estimates_converge(p in 0.0..1.0f64, seed in any::<u64>()) {
        let shots = 10_000u64;
        let n = ShotSampler::new(seed).excited_count(0, 0, p, shots);
        let sigma = (p * (1.0 - p) / shots as f64).sqrt();
        prop_assert!((n as f64 / shots as f64 - p).abs() <= 5.0 * sigma + 1e-12);
    }
}

#[test]
fn rabi_fit_recovers_periods() {
    for (khz, period) in [(43.78, 22.84), (32.42, 30.85)] {
        let data: Vec<(f64, f64)> = (0..=100)
            .map(|k| {
                let t = k as f64 * 1e-6;
                (t, excitation_probability(TAU * khz * 1e3, t, DecayModel::NONE))
            })
            .collect();
        let fit = fit_rabi_flopping(&data, None).unwrap();
        assert!((fit.period_s() * 1e6 - period).abs() / period < 1e-3);
    }
}

#[test]
fn scans_are_bit_reproducible() {
    let t = two_ion_template();
    let chain = two_ion_chain();
    let freqs: Vec<f64> = (0..101).map(|k| 76.5 + 0.02 * k as f64).collect();
    let a = frequency_scan(&t, &chain, &freqs, 11.42, &timing(100), 7).unwrap().to_csv();
    let b = frequency_scan(&t, &chain, &freqs, 11.42, &timing(100), 7).unwrap().to_csv();
    let c = frequency_scan(&t, &chain, &freqs, 11.42, &timing(100), 8).unwrap().to_csv();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn scan_threads_do_not_change_results() {
    let t = two_ion_template();
    let chain = two_ion_chain();
    let freqs: Vec<f64> = (0..51).map(|k| 76.5 + 0.04 * k as f64).collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| frequency_scan(&t, &chain, &freqs, 11.42, &timing(100), 3).unwrap().to_csv())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn scan_peaks_sit_on_ions() {
    let t = two_ion_template();
    let chain = two_ion_chain();
    let freqs: Vec<f64> = (0..201).map(|k| 76.5 + 0.01 * k as f64).collect();
    let scan = frequency_scan(&t, &chain, &freqs, 5.0, &timing(100), 1).unwrap();
    for (series, f_ion) in scan.series.iter().zip([77.07, 78.03]) {
        let best = series
            .points
            .iter()
            .max_by(|a, b| a.p_exact.total_cmp(&b.p_exact))
            .unwrap();
        assert!((best.scan_value - f_ion).abs() < 0.006, "{}", best.scan_value);
    }
}

#[test]
fn long_scan_recovers_victim_rate() {
    let p = BeamProfile::with_stray(
        vec![GaussianSpot::new(1.0, 0.0, 0.95).unwrap()],
        vec![GaussianSpot::new(1e-3, 5.5, 0.95).unwrap()],
        0.0,
    )
    .unwrap();
    let sys = AddressingSystem::symmetric(p, 0.0);
    let chain = two_ion_chain();
    let times: Vec<f64> = (0..=50).map(|k| k as f64 * 100.0).collect();
    let scan = time_scan(&sys, &chain, 0.0, &times, &timing(10_000), DecayModel::NONE, 5).unwrap();
    let last = scan.series[1].points.last().unwrap();
    let omega = extract_slow_rabi(last.p_exact, 5e-3).unwrap();
    assert_relative_eq!(omega / (TAU * 32.42e3), 1e-3, max_relative = 1e-9);
    let noisy = extract_slow_rabi(last.p_estimate, 5e-3).unwrap() / (TAU * 32.42e3);
    assert!((noisy - 1e-3).abs() < 0.05e-3, "{noisy}");
}

/// Noisy two-spot profile: fitted centers scatter around the truth at the
/// level the sensitivities predict.
#[test]
fn noisy_fit_matches_monte_carlo_spread() {
    let truth = [
        GaussianSpot::new(1.0, 0.0, 0.95).unwrap(),
        GaussianSpot::new(0.8, 5.5, 0.95).unwrap(),
    ];
    let clean = sample(&truth, -4.0, 10.0, 141);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut errors = Vec::new();
    let mut predicted = Vec::new();
    for trial in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let data: Vec<(f64, f64)> = clean.iter().map(|&(x, y)| (x, y + noise.sample(&mut rng))).collect();
        let fit = fit_multi_gaussian(&data, 2, None).unwrap();
        errors.push(fit.spots[0].center - truth[0].center);
        predicted.push(fit.sensitivities[0].center);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let spread = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let typical = predicted.iter().sum::<f64>() / n;
    assert!(mean.abs() < 4.0 * spread / n.sqrt(), "bias {mean}");
    assert!((spread / typical - 1.0).abs() < 0.3, "spread {spread} vs {typical}");
    let geometry = extract_spacing_and_waist(&fit_multi_gaussian(&clean, 2, None).unwrap()).unwrap();
    assert_relative_eq!(geometry.spacings[0], 5.5, max_relative = 1e-9);
}
