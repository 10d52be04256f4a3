use std::path::{Path, PathBuf};

use ionaddr::crosstalk::{
    compare_ssa_dsa, crosstalk_matrix, AddressingMode, CrosstalkMatrix, ModeComparison,
    ReferenceSystem, REFERENCE_SYSTEMS,
};
use ionaddr::dynamics::{frequency_scan, time_scan, ScanResult, SequenceTiming};
use ionaddr::estimation::{
    detect_peaks, extract_slow_rabi, extract_spacing_and_waist, fit_multi_gaussian,
    fit_rabi_flopping, FitResult, ScanWaist, SpacingAndWaist,
};
use ionaddr::imaging::{
    cross_section, intensity_crosstalk_at, read_pgm, render_image, section_to_csv, stitch_images,
    subtract_background, write_pgm, CameraImage, ImageGrid, PgmEncoding,
};
use ionaddr::optics::{BeamProfile, GaussianSpot};
use serde::Serialize;

use crate::scenario::Scenario;
use crate::{write_atomic, write_json, CliError};

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn stepped(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && start.is_finite() && stop.is_finite() && stop >= start) {
        return Err(CliError::Config(format!(
            "bad range: start {start}, stop {stop}, step {step}"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| start + k as f64 * step).collect())
}

fn timing_with_shots(scenario: &Scenario, shots: Option<u64>) -> Result<SequenceTiming, CliError> {
    let mut timing = scenario.timing;
    if let Some(s) = shots {
        timing.repetitions = s;
    }
    timing.validate()?;
    Ok(timing)
}

fn write_csv(dir: &Path, name: &str, csv: &str) -> Result<PathBuf, CliError> {
    write_atomic(dir, name, csv.as_bytes())
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Settings shared by every report.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub scenario: String,
    pub mode: AddressingMode,
    pub seed: Option<u64>,
    pub timing: SequenceTiming,
    /// Total wall time of the simulated experiment, µs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment_duration_us: Option<f64>,
}

impl Provenance {
    fn new(scenario: &Scenario, mode: AddressingMode, timing: SequenceTiming) -> Self {
        Self {
            scenario: scenario.name.clone(),
            mode,
            seed: scenario.seed,
            timing,
            experiment_duration_us: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScanFrequencyArgs {
    pub freq_start_mhz: Option<f64>,
    pub freq_stop_mhz: Option<f64>,
    pub freq_step_mhz: Option<f64>,
    pub raman_time_us: Option<f64>,
    pub shots: Option<u64>,
    pub mode: Option<AddressingMode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IonPeak {
    pub label: String,
    pub center_mhz: f64,
    pub center_um: f64,
    pub amplitude: f64,
    pub waist: ScanWaist,
    pub center_sensitivity_mhz: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanFrequencyReport {
    pub provenance: Provenance,
    pub raman_time_us: f64,
    pub points: usize,
    pub peaks: Vec<IonPeak>,
    /// Adjacent fitted centers, MHz.
    pub center_spacings_mhz: Vec<f64>,
    pub center_spacings_um: Vec<f64>,
    pub csv: PathBuf,
    #[serde(skip)]
    pub scan: ScanResult,
}

pub fn scan_frequency(scenario: &Scenario, args: &ScanFrequencyArgs) -> Result<ScanFrequencyReport, CliError> {
    let mode = args.mode.unwrap_or(scenario.mode);
    let seed = scenario.seed()?;
    let timing = timing_with_shots(scenario, args.shots)?;
    let s = &scenario.scan;
    let freqs = stepped(
        args.freq_start_mhz.unwrap_or(s.freq_start_mhz),
        args.freq_stop_mhz.unwrap_or(s.freq_stop_mhz),
        args.freq_step_mhz.unwrap_or(s.freq_step_mhz),
    )?;
    let raman_time_us = args.raman_time_us.unwrap_or(s.raman_time_us);
    let chain = scenario.chain()?;
    let template = scenario.scan_template(mode)?;
    let scan = frequency_scan(&template, &chain, &freqs, raman_time_us, &timing, seed)?;

    let channel = scenario.channel1()?;
    let mut peaks = Vec::new();
    for series in &scan.series {
        let data = series.estimates();
        if detect_peaks(&data).is_empty() {
            return Err(CliError::Numeric(format!(
                "no excitation peak for ion {} in {:.4}..{:.4} MHz",
                series.label,
                freqs[0],
                freqs[freqs.len() - 1]
            )));
        }
        let fit = fit_multi_gaussian(&data, 1, None)?;
        if !fit.converged {
            return Err(CliError::Numeric(format!(
                "profile fit for ion {} did not converge after {} iterations",
                series.label, fit.iterations
            )));
        }
        let spot = fit.spots[0];
        peaks.push(IonPeak {
            label: series.label.clone(),
            center_mhz: spot.center,
            center_um: channel.tone_to_position(spot.center),
            amplitude: spot.amplitude,
            waist: ScanWaist::from_fit(spot.waist, &channel),
            center_sensitivity_mhz: fit.sensitivities[0].center,
            residual_norm: fit.residual_norm,
            iterations: fit.iterations,
        });
    }
    let mut centers: Vec<f64> = peaks.iter().map(|p| p.center_mhz).collect();
    centers.sort_by(f64::total_cmp);
    let center_spacings_mhz: Vec<f64> = centers.windows(2).map(|w| w[1] - w[0]).collect();
    let center_spacings_um = center_spacings_mhz
        .iter()
        .map(|d| d * channel.position_coefficient_um_per_mhz.abs())
        .collect();

    let dir = scenario.output_dir();
    let csv = write_csv(&dir, "scan_frequency.csv", &scan.to_csv())?;
    let mut provenance = Provenance::new(scenario, mode, timing);
    provenance.experiment_duration_us = Some(timing.duration(raman_time_us)?.1 * freqs.len() as f64);
    let report = ScanFrequencyReport {
        provenance,
        raman_time_us,
        points: freqs.len(),
        peaks,
        center_spacings_mhz,
        center_spacings_um,
        csv,
        scan,
    };
    write_json(&dir, "scan_frequency.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct RabiArgs {
    pub ion: String,
    pub t_max_us: Option<f64>,
    pub points: Option<usize>,
    pub shots: Option<u64>,
    pub mode: Option<AddressingMode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VictimFinal {
    pub label: String,
    pub p_final: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RabiReport {
    pub provenance: Provenance,
    pub ion: String,
    pub omega_rad_s: f64,
    pub rabi_khz: f64,
    pub period_us: f64,
    pub decay_rate_per_s: f64,
    pub residual_norm: f64,
    pub victims: Vec<VictimFinal>,
    pub csv: PathBuf,
}

pub fn rabi(scenario: &Scenario, args: &RabiArgs) -> Result<RabiReport, CliError> {
    let mode = args.mode.unwrap_or(scenario.mode);
    let seed = scenario.seed()?;
    let timing = timing_with_shots(scenario, args.shots)?;
    let ion = scenario.ion_index(&args.ion)?;
    let chain = scenario.chain()?;
    let t_max = args.t_max_us.unwrap_or(scenario.rabi.t_max_us);
    let points = args.points.unwrap_or(scenario.rabi.points);
    if points < 2 || !(t_max > 0.0) {
        return Err(CliError::Config(format!(
            "rabi scan needs t-max > 0 and >= 2 points, got {t_max} us / {points}"
        )));
    }
    let times = linspace(0.0, t_max, points);
    let system = scenario.system_for(ion, mode)?;
    let scan = time_scan(
        &system,
        &chain,
        chain.positions_um[ion],
        &times,
        &timing,
        scenario.decay(),
        seed,
    )?;
    let label = chain.label(ion);
    let dir = scenario.output_dir();
    let csv = write_csv(&dir, &format!("rabi_{}.csv", file_label(&label)), &scan.to_csv())?;

    let data: Vec<(f64, f64)> = scan.series[ion]
        .estimates()
        .into_iter()
        .map(|(t, p)| (t * 1e-6, p))
        .collect();
    let fit = fit_rabi_flopping(&data, None)?;
    let victims = scan
        .series
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != ion)
        .map(|(_, s)| VictimFinal {
            label: s.label.clone(),
            p_final: s.points[s.points.len() - 1].p_estimate,
        })
        .collect();
    let mut provenance = Provenance::new(scenario, mode, timing);
    provenance.experiment_duration_us = Some(
        times
            .iter()
            .map(|&t| timing.duration(t).map(|d| d.1))
            .sum::<Result<f64, _>>()?,
    );
    let report = RabiReport {
        provenance,
        ion: label.clone(),
        omega_rad_s: fit.omega,
        rabi_khz: fit.omega / std::f64::consts::TAU * 1e-3,
        period_us: fit.period_s() * 1e6,
        decay_rate_per_s: fit.decay_rate,
        residual_norm: fit.residual_norm,
        victims,
        csv,
    };
    write_json(&dir, &format!("rabi_{}.json", file_label(&label)), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct CrosstalkArgs {
    pub t_long_us: Option<f64>,
    pub points: Option<usize>,
    pub shots: Option<u64>,
    pub mode: Option<AddressingMode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrosstalkEntry {
    pub addressed: String,
    pub victim: String,
    pub p_final: f64,
    pub victim_rabi_rad_s: f64,
    /// Divided by the victim's own full-drive rate.
    pub victim_normalized: f64,
    /// Divided by the addressed ion's rate.
    pub addressed_normalized: f64,
    pub analytic: f64,
    /// The victim's excitation peaked well above its final value, so it
    /// likely passed half a cycle and the arccos readout is ambiguous.
    pub past_half_cycle: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrosstalkReport {
    pub provenance: Provenance,
    pub t_long_us: f64,
    pub entries: Vec<CrosstalkEntry>,
    pub analytic_matrix: CrosstalkMatrix,
    pub csv: Vec<PathBuf>,
}

impl CrosstalkReport {
    pub fn entry(&self, addressed: &str, victim: &str) -> Option<&CrosstalkEntry> {
        self.entries
            .iter()
            .find(|e| e.addressed == addressed && e.victim == victim)
    }
}

pub fn crosstalk(scenario: &Scenario, args: &CrosstalkArgs) -> Result<CrosstalkReport, CliError> {
    let mode = args.mode.unwrap_or(scenario.mode);
    let seed = scenario.seed()?;
    let timing = timing_with_shots(scenario, args.shots)?;
    let chain = scenario.chain()?;
    if chain.len() < 2 {
        return Err(CliError::Config("crosstalk needs at least two ions".into()));
    }
    let t_long = args.t_long_us.unwrap_or(scenario.crosstalk.t_long_us);
    let points = args.points.unwrap_or(scenario.crosstalk.points);
    if points < 2 || !(t_long > 0.0) {
        return Err(CliError::Config(format!(
            "crosstalk scan needs t-long > 0 and >= 2 points, got {t_long} us / {points}"
        )));
    }
    let systems = (0..chain.len())
        .map(|i| scenario.system_for(i, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let analytic_matrix = crosstalk_matrix(|i, _| Ok(systems[i].clone()), &chain)?;

    let times = linspace(0.0, t_long, points);
    let dir = scenario.output_dir();
    let shots = timing.repetitions as f64;
    let mut entries = Vec::new();
    let mut csv = Vec::new();
    for (i, system) in systems.iter().enumerate() {
        let scan = time_scan(
            system,
            &chain,
            chain.positions_um[i],
            &times,
            &timing,
            scenario.decay(),
            seed.wrapping_add(i as u64),
        )?;
        let label = chain.label(i);
        csv.push(write_csv(
            &dir,
            &format!("crosstalk_{}.csv", file_label(&label)),
            &scan.to_csv(),
        )?);
        let addressed_rate = chain.rabi_rate(i, system.peak_rabi);
        for (j, series) in scan.series.iter().enumerate().filter(|(j, _)| *j != i) {
            let p_final = series.points[series.points.len() - 1].p_estimate;
            let p_max = series.points.iter().map(|p| p.p_estimate).fold(0.0, f64::max);
            let sigma = (p_final.max(1.0 / shots) * (1.0 - p_final).max(1.0 / shots) / shots).sqrt();
            let omega = extract_slow_rabi(p_final, t_long * 1e-6)?;
            let victim_rate = chain.rabi_rate(j, system.peak_rabi);
            let ratio = |rate: f64| if rate > 0.0 { omega / rate } else { f64::NAN };
            entries.push(CrosstalkEntry {
                addressed: label.clone(),
                victim: series.label.clone(),
                p_final,
                victim_rabi_rad_s: omega,
                victim_normalized: ratio(victim_rate),
                addressed_normalized: ratio(addressed_rate),
                analytic: analytic_matrix.get(i, j),
                past_half_cycle: p_max - p_final > 4.0 * sigma,
            });
        }
    }
    csv.push(write_csv(&dir, "crosstalk_matrix.csv", &analytic_matrix.to_csv())?);
    let report = CrosstalkReport {
        provenance: Provenance::new(scenario, mode, timing),
        t_long_us: t_long,
        entries,
        analytic_matrix,
        csv,
    };
    write_json(&dir, "crosstalk.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct CompareModesArgs {
    /// Extra intensity-crosstalk values to tabulate.
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairComparison {
    pub addressed: String,
    pub neighbor: String,
    #[serde(flatten)]
    pub figures: ModeComparison,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareModesReport {
    pub scenario: String,
    pub pairs: Vec<PairComparison>,
    pub requested: Vec<ModeComparison>,
    pub literature: Vec<ReferenceSystem>,
}

pub fn compare_modes(scenario: &Scenario, args: &CompareModesArgs) -> Result<CompareModesReport, CliError> {
    let chain = scenario.chain()?;
    let mut pairs = Vec::new();
    for i in 0..chain.len() {
        let profile = scenario.arm1_profile(scenario.ion_frequency(i)?)?;
        for j in [i.wrapping_sub(1), i + 1] {
            if j >= chain.len() {
                continue;
            }
            pairs.push(PairComparison {
                addressed: chain.label(i),
                neighbor: chain.label(j),
                figures: compare_ssa_dsa(&profile, chain.positions_um[i], chain.positions_um[j])?,
            });
        }
    }
    let requested = args
        .epsilons
        .iter()
        .map(|&e| ModeComparison::from_intensity_crosstalk(e))
        .collect::<Result<_, _>>()?;
    let report = CompareModesReport {
        scenario: scenario.name.clone(),
        pairs,
        requested,
        literature: REFERENCE_SYSTEMS.to_vec(),
    };
    write_json(&scenario.output_dir(), "compare_modes.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImageLayout {
    /// One exposure per tone; neighbor crosstalk read from each exposure.
    #[default]
    PerTone,
    /// A single exposure of all tones; crosstalk is not separable.
    Composite,
}

#[derive(Debug, Clone, Default)]
pub struct ImagePipelineArgs {
    pub layout: ImageLayout,
    /// Ingest these graymaps instead of rendering.
    pub inputs: Vec<PathBuf>,
    pub tone_count: Option<usize>,
    pub tone_spacing_mhz: Option<f64>,
    pub no_stray: bool,
    /// Addressed-to-neighbor distance for ingested images, µm.
    pub neighbor_offset_um: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ToneReadout {
    pub index: usize,
    pub addressed_um: f64,
    /// Largest neighbor/addressed intensity ratio; `None` for a blank image.
    pub neighbor_crosstalk: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImagePipelineReport {
    pub scenario: String,
    pub layout: &'static str,
    pub images: usize,
    pub background_levels: Vec<f64>,
    pub tones: Vec<ToneReadout>,
    pub max_neighbor_crosstalk: Option<f64>,
    pub section_csv: PathBuf,
    pub composite_pgm: PathBuf,
    #[serde(skip)]
    pub section: Vec<(f64, f64)>,
}

fn scaled(profile: &BeamProfile, factor: f64) -> BeamProfile {
    let scale = |s: &GaussianSpot| GaussianSpot {
        amplitude: s.amplitude * factor,
        ..*s
    };
    BeamProfile {
        spots: profile.spots.iter().map(scale).collect(),
        stray_spots: profile.stray_spots.iter().map(scale).collect(),
        floor: profile.floor * factor,
    }
}

/// Section along the row through the brightest pixel.
fn section_through_peak(img: &CameraImage) -> Result<(Vec<(f64, f64)>, f64), CliError> {
    let (col, row) = img.argmax();
    let section = cross_section(img, 0.0, img.grid.y_of(row))?;
    Ok((section, img.grid.x_of(col)))
}

fn neighbor_readout(section: &[(f64, f64)], addressed: f64, offset: f64) -> Result<Option<f64>, CliError> {
    if !section.iter().any(|p| p.1 > 0.0) {
        return Ok(None);
    }
    let (lo, hi) = (section[0].0, section[section.len() - 1].0);
    let mut worst: Option<f64> = None;
    for x in [addressed - offset, addressed + offset] {
        if (lo..=hi).contains(&x) {
            let r = intensity_crosstalk_at(section, addressed, x)?;
            worst = Some(worst.map_or(r, |w| w.max(r)));
        }
    }
    Ok(worst)
}

pub fn image_pipeline(scenario: &Scenario, args: &ImagePipelineArgs) -> Result<ImagePipelineReport, CliError> {
    let im = &scenario.imaging;
    let dir = scenario.output_dir();
    let chain = scenario.chain()?;
    let channel = scenario.channel1()?;

    let (raw, tone_positions, offset) = if args.inputs.is_empty() {
        let freqs: Vec<f64> = match args.tone_count {
            Some(0) => return Err(CliError::Config("tone count must be >= 1".into())),
            Some(n) => {
                let start = scenario.ion_frequency(0)?;
                let spacing = match args.tone_spacing_mhz {
                    Some(s) => s,
                    None if chain.len() >= 2 => scenario.ion_frequency(1)? - start,
                    None => {
                        return Err(CliError::Config(
                            "a tone comb needs --tone-spacing or two ions".into(),
                        ))
                    }
                };
                (0..n).map(|k| start + k as f64 * spacing).collect()
            }
            None => (0..chain.len())
                .map(|i| scenario.ion_frequency(i))
                .collect::<Result<_, _>>()?,
        };
        let positions: Vec<f64> = freqs.iter().map(|&f| channel.tone_to_position(f)).collect();
        let profiles = freqs
            .iter()
            .map(|&f| {
                let mut p = scenario.arm1_profile(f)?;
                if args.no_stray {
                    p.stray_spots.clear();
                }
                Ok(scaled(&p, im.peak_counts))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let (x_lo, x_hi) = positions
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let half_height = 4.0 * im.transverse_waist_um + 2.0 * im.pixel_pitch_um;
        let grid = ImageGrid::covering(
            (x_lo - im.margin_um, x_hi + im.margin_um),
            (-half_height, half_height),
            im.pixel_pitch_um,
        )?;
        let seed = scenario.seed()?;
        let render = |p: &BeamProfile, k: usize| -> Result<CameraImage, CliError> {
            Ok(render_image(
                p,
                im.transverse_waist_um,
                grid,
                im.background,
                im.noise_sigma,
                seed.wrapping_add(k as u64),
            )?
            .with_magnification(im.magnification)?)
        };
        let images = match args.layout {
            ImageLayout::PerTone => profiles
                .iter()
                .enumerate()
                .map(|(k, p)| render(p, k))
                .collect::<Result<Vec<_>, _>>()?,
            ImageLayout::Composite => {
                let all = profiles
                    .iter()
                    .skip(1)
                    .fold(profiles[0].clone(), |acc, p| acc.superpose(p));
                vec![render(&all, 0)?]
            }
        };
        let spacing = if positions.len() >= 2 {
            (positions[1] - positions[0]).abs()
        } else {
            args.neighbor_offset_um.unwrap_or(channel.position_coefficient_um_per_mhz.abs())
        };
        (images, Some(positions), args.neighbor_offset_um.unwrap_or(spacing))
    } else {
        let images = args
            .inputs
            .iter()
            .map(|p| {
                if !ionaddr::imaging::sidecar_path(p).exists() {
                    return Err(CliError::Io(format!("{}: missing sidecar", p.display())));
                }
                Ok(read_pgm(p)?)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let offset = match args.neighbor_offset_um {
            Some(o) => o,
            None if chain.len() >= 2 => chain.positions_um[1] - chain.positions_um[0],
            None => {
                return Err(CliError::Config(
                    "ingested images need --neighbor-offset or two ions in the scenario".into(),
                ))
            }
        };
        (images, None, offset)
    };

    let background_levels = raw
        .iter()
        .map(ionaddr::imaging::estimate_background)
        .collect::<Result<Vec<_>, _>>()?;
    let clean = raw
        .iter()
        .map(subtract_background)
        .collect::<Result<Vec<_>, _>>()?;

    let mut tones = Vec::new();
    if args.layout == ImageLayout::PerTone {
        for (k, img) in clean.iter().enumerate() {
            let (section, peak_x) = match &tone_positions {
                Some(pos) => (cross_section(img, 0.0, 0.0)?, pos[k]),
                None => section_through_peak(img)?,
            };
            tones.push(ToneReadout {
                index: k,
                addressed_um: peak_x,
                neighbor_crosstalk: neighbor_readout(&section, peak_x, offset)?,
            });
        }
    }
    let max_neighbor_crosstalk = tones
        .iter()
        .filter_map(|t| t.neighbor_crosstalk)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));

    let stitched = stitch_images(&clean)?;
    let section = match &tone_positions {
        Some(_) => cross_section(&stitched, 0.0, 0.0)?,
        None => section_through_peak(&stitched)?.0,
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    if args.inputs.is_empty() && args.layout == ImageLayout::PerTone {
        for (k, img) in raw.iter().enumerate() {
            write_pgm(img, &dir.join(format!("tone_{k:02}.pgm")), PgmEncoding::Binary, None)?;
        }
    }
    let composite_pgm = dir.join("composite.pgm");
    write_pgm(&stitched, &composite_pgm, PgmEncoding::Binary, None)?;
    let section_csv = write_csv(&dir, "section.csv", &section_to_csv(&section))?;

    let report = ImagePipelineReport {
        scenario: scenario.name.clone(),
        layout: match args.layout {
            ImageLayout::PerTone => "per-tone",
            ImageLayout::Composite => "composite",
        },
        images: raw.len(),
        background_levels,
        tones,
        max_neighbor_crosstalk,
        section_csv,
        composite_pgm,
        section,
    };
    write_json(&dir, "image_pipeline.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct FitProfileArgs {
    pub input: PathBuf,
    pub spots: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitProfileReport {
    pub input: PathBuf,
    pub points: usize,
    pub fit: FitResult,
    pub geometry: SpacingAndWaist,
}

/// Reads two numeric columns (position, intensity); a header row is allowed.
pub fn read_xy_csv(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let parse = |k: usize| record.get(k).and_then(|v| v.parse::<f64>().ok());
        match (parse(0), parse(1)) {
            (Some(x), Some(y)) => out.push((x, y)),
            _ if line == 0 => continue,
            _ => {
                return Err(CliError::Config(format!(
                    "{}: line {}: expected two numeric columns",
                    path.display(),
                    line + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn fit_profile(output_dir: &Path, args: &FitProfileArgs) -> Result<FitProfileReport, CliError> {
    let data = read_xy_csv(&args.input)?;
    let fit = fit_multi_gaussian(&data, args.spots, None)?;
    if !fit.converged {
        return Err(CliError::Numeric(format!(
            "fit did not converge after {} iterations",
            fit.iterations
        )));
    }
    let geometry = extract_spacing_and_waist(&fit)?;
    let report = FitProfileReport {
        input: args.input.clone(),
        points: data.len(),
        fit,
        geometry,
    };
    write_json(output_dir, "fit_profile.json", &report)?;
    Ok(report)
}
