//! Synthetic camera images of the addressing spots, the analysis chain used
//! on them (background removal, stitching, cross sections) and the
//! segmented-detector channel map.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{GraymapHeader, PnmEncoder, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::crosstalk::IonChain;
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::optics::BeamProfile;

/// Border width, in pixels, used to estimate the background.
pub const BACKGROUND_BORDER_PX: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    /// µm per pixel at the ion plane
    pub pixel_pitch_um: f64,
    /// µm coordinate of the center of pixel (0, 0)
    pub origin_um: (f64, f64),
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, pixel_pitch_um: f64, origin_um: (f64, f64)) -> Result<Self> {
        let grid = Self {
            width,
            height,
            pixel_pitch_um,
            origin_um,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid of the given pitch whose pixel centers cover `x_range × y_range`.
    pub fn covering(x_range: (f64, f64), y_range: (f64, f64), pixel_pitch_um: f64) -> Result<Self> {
        if !(pixel_pitch_um > 0.0 && pixel_pitch_um.is_finite()) {
            return Err(invalid("pixel_pitch_um", format!("must be > 0, got {pixel_pitch_um}")));
        }
        let count = |(lo, hi): (f64, f64), name| {
            if !(hi >= lo && lo.is_finite() && hi.is_finite()) {
                return Err(invalid(name, format!("bad range [{lo}, {hi}]")));
            }
            Ok(((hi - lo) / pixel_pitch_um).ceil() as usize + 1)
        };
        Self::new(
            count(x_range, "x_range")?,
            count(y_range, "y_range")?,
            pixel_pitch_um,
            (x_range.0, y_range.0),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("grid", "needs at least one pixel in each direction"));
        }
        if !(self.pixel_pitch_um > 0.0 && self.pixel_pitch_um.is_finite()) {
            return Err(invalid("pixel_pitch_um", format!("must be > 0, got {}", self.pixel_pitch_um)));
        }
        ensure_finite("origin_x", self.origin_um.0)?;
        ensure_finite("origin_y", self.origin_um.1)
    }

    pub fn x_of(&self, col: usize) -> f64 {
        self.origin_um.0 + col as f64 * self.pixel_pitch_um
    }

    pub fn y_of(&self, row: usize) -> f64 {
        self.origin_um.1 + row as f64 * self.pixel_pitch_um
    }
}

/// Row-major intensity grid. Values are nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraImage {
    pub grid: ImageGrid,
    pub pixels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnification: Option<f64>,
}

impl CameraImage {
    pub fn new(grid: ImageGrid, pixels: Vec<f64>) -> Result<Self> {
        let img = Self {
            grid,
            pixels,
            magnification: None,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(grid: ImageGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.width * grid.height])
    }

    pub fn with_magnification(mut self, magnification: f64) -> Result<Self> {
        if !(magnification > 0.0 && magnification.is_finite()) {
            return Err(invalid("magnification", format!("must be > 0, got {magnification}")));
        }
        self.magnification = Some(magnification);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.pixels.len() != self.grid.width * self.grid.height {
            return Err(invalid(
                "pixels",
                format!(
                    "{} values for a {}x{} grid",
                    self.pixels.len(),
                    self.grid.width,
                    self.grid.height
                ),
            ));
        }
        if let Some(v) = self.pixels.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid("pixels", format!("values must be finite and >= 0, found {v}")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.grid.width + col]
    }

    pub fn max_value(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    /// `(col, row)` of the brightest pixel; the first one on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.pixels.iter().enumerate() {
            if v > self.pixels[best] {
                best = i;
            }
        }
        (best % self.grid.width, best / self.grid.width)
    }
}

/// Separable extension of a 1-D profile: `background + I(x)·exp(−2(y/wₜ)²)`
/// plus seeded Gaussian noise, clamped at zero. Row `r` draws its noise
/// from ChaCha8 stream `r`, so the image does not depend on thread count.
pub fn render_image(
    profile: &BeamProfile,
    transverse_waist_um: f64,
    grid: ImageGrid,
    background: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<CameraImage> {
    profile.validate()?;
    grid.validate()?;
    if !(transverse_waist_um > 0.0 && transverse_waist_um.is_finite()) {
        return Err(invalid("transverse_waist_um", format!("must be > 0, got {transverse_waist_um}")));
    }
    if !(background >= 0.0 && background.is_finite()) {
        return Err(invalid("background", format!("must be >= 0, got {background}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(invalid("noise_sigma", format!("must be >= 0, got {noise_sigma}")));
    }
    let along: Vec<f64> = (0..grid.width).map(|c| profile.intensity_at(grid.x_of(c))).collect();
    let noise = Normal::new(0.0, noise_sigma).expect("sigma checked above");

    let mut pixels = vec![0.0; grid.width * grid.height];
    pixels
        .par_chunks_mut(grid.width)
        .enumerate()
        .for_each(|(row, out)| {
            let u = grid.y_of(row) / transverse_waist_um;
            let transverse = (-2.0 * u * u).exp();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(row as u64);
            for (v, a) in out.iter_mut().zip(&along) {
                let n = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                *v = (background + a * transverse + n).max(0.0);
            }
        });
    CameraImage::new(grid, pixels)
}

fn border_values(img: &CameraImage) -> Vec<f64> {
    let (w, h, b) = (img.width(), img.height(), BACKGROUND_BORDER_PX);
    let mut out = Vec::with_capacity(2 * b * (w + h));
    for row in 0..h {
        for col in 0..w {
            if row < b || row >= h - b || col < b || col >= w - b {
                out.push(img.get(col, row));
            }
        }
    }
    out
}

/// Background level: lower median of the two-pixel border.
pub fn estimate_background(img: &CameraImage) -> Result<f64> {
    let b = BACKGROUND_BORDER_PX;
    if img.width() <= 2 * b || img.height() <= 2 * b {
        return Err(Error::Domain(format!(
            "{}x{} image has no interior inside a {b}-pixel border",
            img.width(),
            img.height()
        )));
    }
    let mut border = border_values(img);
    border.sort_by(f64::total_cmp);
    Ok(border[(border.len() - 1) / 2])
}

/// Subtracts the border median and clamps at zero. Taking an actual border
/// value (the lower median) makes a second pass subtract exactly zero.
pub fn subtract_background(img: &CameraImage) -> Result<CameraImage> {
    let level = estimate_background(img)?;
    Ok(CameraImage {
        grid: img.grid,
        pixels: img.pixels.iter().map(|v| (v - level).max(0.0)).collect(),
        magnification: img.magnification,
    })
}

/// Pixelwise maximum.
pub fn stitch_images(images: &[CameraImage]) -> Result<CameraImage> {
    let Some(first) = images.first() else {
        return Err(Error::Domain("nothing to stitch".into()));
    };
    for (i, img) in images.iter().enumerate().skip(1) {
        if img.grid != first.grid {
            return Err(Error::GeometryMismatch(format!(
                "image {i} has grid {:?}, image 0 has {:?}",
                img.grid, first.grid
            )));
        }
    }
    let mut pixels = first.pixels.clone();
    for img in &images[1..] {
        for (p, v) in pixels.iter_mut().zip(&img.pixels) {
            *p = p.max(*v);
        }
    }
    Ok(CameraImage {
        grid: first.grid,
        pixels,
        magnification: first.magnification,
    })
}

fn bilinear(img: &CameraImage, x: f64, y: f64) -> f64 {
    let g = &img.grid;
    let fx = ((x - g.origin_um.0) / g.pixel_pitch_um).clamp(0.0, (g.width - 1) as f64);
    let fy = ((y - g.origin_um.1) / g.pixel_pitch_um).clamp(0.0, (g.height - 1) as f64);
    let c0 = (fx.floor() as usize).min(g.width.saturating_sub(2));
    let r0 = (fy.floor() as usize).min(g.height.saturating_sub(2));
    let c1 = (c0 + 1).min(g.width - 1);
    let r1 = (r0 + 1).min(g.height - 1);
    let tx = fx - c0 as f64;
    let ty = fy - r0 as f64;
    let top = img.get(c0, r0) * (1.0 - tx) + img.get(c1, r0) * tx;
    let bottom = img.get(c0, r1) * (1.0 - tx) + img.get(c1, r1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Samples along the line `{p : p·n = offset}` with `n = (−sin θ, cos θ)`.
///
/// Positions are the coordinate `p·d` along `d = (cos θ, sin θ)`, spaced by
/// the pixel pitch from the projection of pixel (0, 0) and kept inside the
/// hull of pixel centers. Axis-aligned sections thus sample pixel centers.
/// `θ = 0, offset = y₀` is the row through `y = y₀`, positions equal to x.
pub fn cross_section(img: &CameraImage, angle_rad: f64, offset_um: f64) -> Result<Vec<(f64, f64)>> {
    ensure_finite("angle_rad", angle_rad)?;
    ensure_finite("offset_um", offset_um)?;
    let g = &img.grid;
    let (sin, cos) = angle_rad.sin_cos();
    let base = (-sin * offset_um, cos * offset_um);
    let dir = (cos, sin);
    let eps = 1e-9 * g.pixel_pitch_um;

    let mut s_lo = f64::NEG_INFINITY;
    let mut s_hi = f64::INFINITY;
    let axes = [
        (base.0, dir.0, g.origin_um.0, g.x_of(g.width - 1)),
        (base.1, dir.1, g.origin_um.1, g.y_of(g.height - 1)),
    ];
    for (p0, d, lo, hi) in axes {
        if d.abs() < 1e-15 {
            if p0 < lo - eps || p0 > hi + eps {
                return Err(Error::EmptySection);
            }
            continue;
        }
        let (a, b) = ((lo - eps - p0) / d, (hi + eps - p0) / d);
        s_lo = s_lo.max(a.min(b));
        s_hi = s_hi.min(a.max(b));
    }
    if s_lo > s_hi {
        return Err(Error::EmptySection);
    }
    let anchor = g.origin_um.0 * dir.0 + g.origin_um.1 * dir.1;
    let k_lo = ((s_lo - anchor) / g.pixel_pitch_um).ceil() as i64;
    let k_hi = ((s_hi - anchor) / g.pixel_pitch_um).floor() as i64;
    if k_lo > k_hi {
        return Err(Error::EmptySection);
    }
    Ok((k_lo..=k_hi)
        .map(|k| {
            let s = anchor + k as f64 * g.pixel_pitch_um;
            (s, bilinear(img, base.0 + s * dir.0, base.1 + s * dir.1))
        })
        .collect())
}

fn interpolate(section: &[(f64, f64)], x: f64) -> Result<f64> {
    let first = section.first().ok_or(Error::EmptySection)?;
    let last = section[section.len() - 1];
    if x < first.0 || x > last.0 {
        return Err(Error::Domain(format!(
            "x = {x} outside the section span [{}, {}]",
            first.0, last.0
        )));
    }
    let i = section.partition_point(|p| p.0 <= x);
    if i == 0 {
        return Ok(first.1);
    }
    let (x0, y0) = section[i - 1];
    if i == section.len() || x0 == x {
        return Ok(y0);
    }
    let (x1, y1) = section[i];
    Ok(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

/// `I(x_neighbor)/I(x_addressed)` read off a section by linear interpolation.
pub fn intensity_crosstalk_at(section: &[(f64, f64)], x_addressed: f64, x_neighbor: f64) -> Result<f64> {
    if section.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Domain("section positions must be strictly increasing".into()));
    }
    let addressed = interpolate(section, x_addressed)?;
    let neighbor = interpolate(section, x_neighbor)?;
    if !(addressed > 0.0) {
        return Err(Error::Normalization {
            position_um: x_addressed,
        });
    }
    Ok(neighbor / addressed)
}

pub fn section_to_csv(section: &[(f64, f64)]) -> String {
    let mut out = String::from("position_um,intensity\n");
    for (x, v) in section {
        let _ = writeln!(out, "{x},{v}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McpmtGeometry {
    pub channel_width_um: f64,
    pub channel_gap_um: f64,
    pub n_channels: usize,
    pub magnification: f64,
    /// PSF standard deviation at the detector plane
    pub psf_sigma_um: f64,
}

impl Default for McpmtGeometry {
    fn default() -> Self {
        Self {
            channel_width_um: 800.0,
            channel_gap_um: 200.0,
            n_channels: 32,
            magnification: 200.0,
            psf_sigma_um: 50.0,
        }
    }
}

impl McpmtGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("channel_width_um", self.channel_width_um),
            ("channel_gap_um", self.channel_gap_um),
            ("magnification", self.magnification),
            ("psf_sigma_um", self.psf_sigma_um),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if self.n_channels == 0 {
            return Err(invalid("n_channels", "must be >= 1"));
        }
        Ok(())
    }

    pub fn pitch_um(&self) -> f64 {
        self.channel_width_um + self.channel_gap_um
    }

    /// Detector is centered on the optical axis.
    pub fn detector_span_um(&self) -> (f64, f64) {
        let total = self.n_channels as f64 * self.pitch_um() - self.channel_gap_um;
        (-0.5 * total, 0.5 * total)
    }

    pub fn channel_span_um(&self, k: usize) -> (f64, f64) {
        let left = self.detector_span_um().0 + k as f64 * self.pitch_um();
        (left, left + self.channel_width_um)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAssignment {
    pub ion: usize,
    pub label: String,
    pub image_position_um: f64,
    pub channel: usize,
    /// Image center falls between channels; `channel` is the nearest one.
    pub in_gap: bool,
    pub collected_fraction: f64,
    /// PSF mass on all other channels
    pub leakage: f64,
    /// PSF mass in gaps and beyond the detector edges
    pub lost: f64,
}

fn normal_mass(center: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let s = sigma * std::f64::consts::SQRT_2;
    let (a, b) = ((lo - center) / s, (hi - center) / s);
    // same-sign tails are differenced in erfc to keep precision
    if a >= 0.0 {
        0.5 * (erfc(a) - erfc(b))
    } else if b <= 0.0 {
        0.5 * (erfc(-b) - erfc(-a))
    } else {
        0.5 * (erf(b) - erf(a))
    }
}

pub fn map_ions_to_channels(
    chain: &IonChain,
    geom: &McpmtGeometry,
    alignment_offset_um: f64,
) -> Result<Vec<ChannelAssignment>> {
    chain.validate()?;
    geom.validate()?;
    ensure_finite("alignment_offset_um", alignment_offset_um)?;
    let (det_lo, det_hi) = geom.detector_span_um();
    let pitch = geom.pitch_um();
    let sigma = geom.psf_sigma_um;

    chain
        .positions_um
        .iter()
        .enumerate()
        .map(|(ion, &x)| {
            let u = geom.magnification * x + alignment_offset_um;
            if !(det_lo..=det_hi).contains(&u) {
                return Err(Error::OffDetector {
                    index: ion,
                    image_position_um: u,
                });
            }
            let k = (((u - det_lo) / pitch).floor() as usize).min(geom.n_channels - 1);
            let within = u - geom.channel_span_um(k).0;
            let in_gap = within > geom.channel_width_um;
            let channel = if in_gap && within - geom.channel_width_um > 0.5 * geom.channel_gap_um {
                k + 1
            } else {
                k
            };

            let masses: Vec<f64> = (0..geom.n_channels)
                .map(|j| {
                    let (lo, hi) = geom.channel_span_um(j);
                    normal_mass(u, sigma, lo, hi)
                })
                .collect();
            let collected = masses[channel];
            let leakage = masses.iter().sum::<f64>() - collected;
            let gaps: f64 = (0..geom.n_channels - 1)
                .map(|j| {
                    let hi = geom.channel_span_um(j).1;
                    normal_mass(u, sigma, hi, hi + geom.channel_gap_um)
                })
                .sum();
            let s = sigma * std::f64::consts::SQRT_2;
            let outside = 0.5 * erfc((u - det_lo) / s) + 0.5 * erfc((det_hi - u) / s);

            Ok(ChannelAssignment {
                ion,
                label: chain.label(ion),
                image_position_um: u,
                channel,
                in_gap,
                collected_fraction: collected,
                leakage,
                lost: gaps + outside,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PgmEncoding {
    /// P2
    Ascii,
    /// P5
    Binary,
}

/// Sidecar written next to a graymap as `<file>.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSidecar {
    pub pixel_pitch_um: f64,
    pub origin_um: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnification: Option<f64>,
    /// Intensity per count
    pub scale: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes a 16-bit graymap plus sidecar. Without `scale` the brightest
/// pixel maps to full scale.
pub fn write_pgm(img: &CameraImage, path: &Path, encoding: PgmEncoding, scale: Option<f64>) -> Result<ImageSidecar> {
    img.validate()?;
    let scale = match scale {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(invalid("scale", format!("must be > 0, got {s}"))),
        None => {
            let peak = img.max_value();
            if peak > 0.0 {
                peak / f64::from(u16::MAX)
            } else {
                1.0
            }
        }
    };
    let counts: Vec<u16> = img
        .pixels
        .iter()
        .map(|v| (v / scale).round().min(f64::from(u16::MAX)) as u16)
        .collect();
    let bytes: Vec<u8> = counts.iter().flat_map(|c| c.to_ne_bytes()).collect();
    let sample = match encoding {
        PgmEncoding::Ascii => SampleEncoding::Ascii,
        PgmEncoding::Binary => SampleEncoding::Binary,
    };
    let file = BufWriter::new(fs::File::create(path)?);
    let header = GraymapHeader {
        encoding: sample,
        width: img.width() as u32,
        height: img.height() as u32,
        maxwhite: u32::from(u16::MAX),
    };
    PnmEncoder::new(file)
        .with_header(header.into())
        .write_image(&bytes, img.width() as u32, img.height() as u32, ExtendedColorType::L16)?;

    let sidecar = ImageSidecar {
        pixel_pitch_um: img.grid.pixel_pitch_um,
        origin_um: img.grid.origin_um,
        magnification: img.magnification,
        scale,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(sidecar)
}

/// Reads a graymap and its sidecar; a missing sidecar means unit pitch,
/// zero origin and unit scale.
pub fn read_pgm(path: &Path) -> Result<CameraImage> {
    let gray = image::open(path)?.into_luma16();
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        serde_json::from_str(&fs::read_to_string(side)?)?
    } else {
        ImageSidecar {
            pixel_pitch_um: 1.0,
            origin_um: (0.0, 0.0),
            magnification: None,
            scale: 1.0,
        }
    };
    let grid = ImageGrid::new(
        gray.width() as usize,
        gray.height() as usize,
        sidecar.pixel_pitch_um,
        sidecar.origin_um,
    )?;
    let pixels = gray.pixels().map(|p| f64::from(p.0[0]) * sidecar.scale).collect();
    let mut img = CameraImage::new(grid, pixels)?;
    if let Some(m) = sidecar.magnification {
        img = img.with_magnification(m)?;
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::GaussianSpot;
    use approx::assert_relative_eq;

    fn grid() -> ImageGrid {
        ImageGrid::covering((-4.0, 4.0), (-4.0, 4.0), 0.1).unwrap()
    }

    #[test]
    fn constant_render() {
        let empty = BeamProfile {
            spots: vec![],
            stray_spots: vec![],
            floor: 0.0,
        };
        let img = render_image(&empty, 1.0, grid(), 7.0, 0.0, 1).unwrap();
        assert!(img.pixels.iter().all(|&v| v == 7.0));
        let flat = subtract_background(&img).unwrap();
        assert!(flat.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_at_spot_center() {
        let p = BeamProfile::single(1.0, 1.23, 0.95).unwrap();
        let img = render_image(&p, 1.0, grid(), 0.0, 0.0, 1).unwrap();
        let (c, r) = img.argmax();
        assert!((img.grid.x_of(c) - 1.23).abs() <= 0.05 + 1e-12);
        assert!(img.grid.y_of(r).abs() <= 0.05 + 1e-12);
    }

    #[test]
    fn noise_is_seeded() {
        let p = BeamProfile::single(1.0, 0.0, 0.95).unwrap();
        let a = render_image(&p, 1.0, grid(), 1.0, 0.1, 9).unwrap();
        let b = render_image(&p, 1.0, grid(), 1.0, 0.1, 9).unwrap();
        let c = render_image(&p, 1.0, grid(), 1.0, 0.1, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.pixels.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn background_needs_interior() {
        let g = ImageGrid::new(4, 10, 1.0, (0.0, 0.0)).unwrap();
        let img = CameraImage::filled(g, 1.0).unwrap();
        assert!(matches!(subtract_background(&img), Err(Error::Domain(_))));
    }

    #[test]
    fn background_removed_under_spot() {
        let p = BeamProfile::single(5.0, 0.0, 0.95).unwrap();
        let clean = render_image(&p, 1.0, grid(), 0.0, 0.0, 1).unwrap();
        let offset = render_image(&p, 1.0, grid(), 3.0, 0.0, 1).unwrap();
        let sub = subtract_background(&offset).unwrap();
        for (a, b) in sub.pixels.iter().zip(&clean.pixels) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stitch_rules() {
        let g = grid();
        let a = render_image(&BeamProfile::single(1.0, -2.0, 0.5).unwrap(), 1.0, g, 0.0, 0.0, 1).unwrap();
        let b = render_image(&BeamProfile::single(1.0, 2.0, 0.5).unwrap(), 1.0, g, 0.0, 0.0, 1).unwrap();
        assert_eq!(stitch_images(std::slice::from_ref(&a)).unwrap(), a);
        let both = stitch_images(&[a.clone(), b.clone()]).unwrap();
        let section = cross_section(&both, 0.0, 0.0).unwrap();
        let at = |x: f64| interpolate(&section, x).unwrap();
        assert_relative_eq!(at(-2.0), 1.0, max_relative = 1e-9);
        assert_relative_eq!(at(2.0), 1.0, max_relative = 1e-9);
        assert!(stitch_images(&[]).is_err());
        let other = ImageGrid::new(3, 3, 0.1, (0.0, 0.0)).unwrap();
        let c = CameraImage::filled(other, 0.0).unwrap();
        assert!(matches!(stitch_images(&[a, c]), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn horizontal_section_tracks_profile() {
        let w = 0.95;
        let p = BeamProfile::single(1.0, 0.3, w).unwrap();
        let g = ImageGrid::covering((-3.8, 3.8), (-1.9, 1.9), w / 5.0).unwrap();
        let img = render_image(&p, 1.0, g, 0.0, 0.0, 1).unwrap();
        let section = cross_section(&img, 0.0, 0.0).unwrap();
        assert!(!section.is_empty());
        for &(x, v) in &section {
            let exact = p.intensity_at(x);
            assert!((v - exact).abs() <= 0.01, "{x}: {v} vs {exact}");
        }
    }

    #[test]
    fn vertical_section_is_transverse() {
        let wt = 1.2;
        let p = BeamProfile::single(1.0, 0.0, 0.95).unwrap();
        let g = ImageGrid::covering((-3.0, 3.0), (-3.0, 3.0), 0.1).unwrap();
        let img = render_image(&p, wt, g, 0.0, 0.0, 1).unwrap();
        // θ = 90°: offset measured along (−1, 0), positions along +y
        let section = cross_section(&img, std::f64::consts::FRAC_PI_2, 0.0).unwrap();
        for &(y, v) in &section {
            let exact = (-2.0 * (y / wt).powi(2)).exp();
            assert!((v - exact).abs() < 1e-9, "{y}: {v} vs {exact}");
        }
    }

    #[test]
    fn section_missing_grid() {
        let img = CameraImage::filled(grid(), 1.0).unwrap();
        assert!(matches!(cross_section(&img, 0.0, 10.0), Err(Error::EmptySection)));
    }

    #[test]
    fn crosstalk_readout() {
        let section: Vec<(f64, f64)> = (0..=110)
            .map(|i| {
                let x = i as f64 * 0.1 - 2.75;
                (x, GaussianSpot::new(1.0, 0.0, 0.95).unwrap().intensity(x))
            })
            .collect();
        assert_eq!(intensity_crosstalk_at(&section, 0.0, 0.0).unwrap(), 1.0);
        let zero: Vec<(f64, f64)> = section.iter().map(|&(x, _)| (x, 0.0)).collect();
        assert!(matches!(
            intensity_crosstalk_at(&zero, 0.0, 1.0),
            Err(Error::Normalization { .. })
        ));
        assert!(intensity_crosstalk_at(&section, 0.0, 50.0).is_err());
    }

    #[test]
    fn channel_geometry() {
        let g = McpmtGeometry::default();
        assert_eq!(g.pitch_um(), 1000.0);
        assert_eq!(g.detector_span_um(), (-15_900.0, 15_900.0));
        assert_eq!(g.channel_span_um(0), (-15_900.0, -15_100.0));
    }

    #[test]
    fn centered_ion_is_collected() {
        let g = McpmtGeometry::default();
        let (lo, hi) = g.channel_span_um(16);
        let x = 0.5 * (lo + hi) / g.magnification;
        let chain = IonChain::new(vec![x]).unwrap();
        let a = &map_ions_to_channels(&chain, &g, 0.0).unwrap()[0];
        assert_eq!(a.channel, 16);
        assert!(!a.in_gap);
        assert!(a.collected_fraction > 1.0 - 1e-12);
        assert!(a.leakage < 1e-12);
    }

    #[test]
    fn adjacent_ions_adjacent_channels() {
        let g = McpmtGeometry::default();
        let (lo, hi) = g.channel_span_um(10);
        let x0 = 0.5 * (lo + hi) / g.magnification;
        let chain = IonChain::new(vec![x0, x0 + 5.5]).unwrap();
        let m = map_ions_to_channels(&chain, &g, 0.0).unwrap();
        assert_eq!(m[1].image_position_um - m[0].image_position_um, 1100.0);
        assert_eq!(m[0].channel + 1, m[1].channel);
    }

    #[test]
    fn edge_ion_splits_evenly() {
        let g = McpmtGeometry::default();
        let edge = g.channel_span_um(5).0;
        let chain = IonChain::new(vec![0.0]).unwrap();
        let a = &map_ions_to_channels(&chain, &g, edge).unwrap()[0];
        assert_eq!(a.channel, 5);
        assert_relative_eq!(a.collected_fraction, 0.5, epsilon = 1e-12);
        assert_relative_eq!(a.collected_fraction + a.leakage + a.lost, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gap_and_off_detector() {
        let g = McpmtGeometry::default();
        let gap_left = g.channel_span_um(3).1;
        let chain = IonChain::new(vec![0.0]).unwrap();
        let near_left = &map_ions_to_channels(&chain, &g, gap_left + 40.0).unwrap()[0];
        assert!(near_left.in_gap);
        assert_eq!(near_left.channel, 3);
        let near_right = &map_ions_to_channels(&chain, &g, gap_left + 160.0).unwrap()[0];
        assert_eq!(near_right.channel, 4);
        assert!(matches!(
            map_ions_to_channels(&chain, &g, 20_000.0),
            Err(Error::OffDetector { index: 0, .. })
        ));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = BeamProfile::single(1000.0, 0.0, 0.95).unwrap();
        let img = render_image(&p, 1.0, grid(), 10.0, 0.0, 1)
            .unwrap()
            .with_magnification(200.0)
            .unwrap();
        for (enc, name) in [(PgmEncoding::Ascii, "a.pgm"), (PgmEncoding::Binary, "b.pgm")] {
            let path = dir.path().join(name);
            let side = write_pgm(&img, &path, enc, None).unwrap();
            let back = read_pgm(&path).unwrap();
            assert_eq!(back.grid, img.grid);
            assert_eq!(back.magnification, Some(200.0));
            for (a, b) in back.pixels.iter().zip(&img.pixels) {
                assert!((a - b).abs() <= 0.5 * side.scale + 1e-9);
            }
        }
    }
}
