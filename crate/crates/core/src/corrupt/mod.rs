//! Scheduled external anomalies: fourteen common image corruptions with five
//! severity levels each.
//!
//! Parameters live in a versioned JSON table (`data/severity.json`), one
//! tuple per kind and severity; each kind's formula is documented there.

pub mod filters;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgops::{hsv_to_rgb, rgb_to_hsv, Hsv};
use crate::imgops::{Image, Rng, CHANNELS};
use filters::Planes;

pub const DEFAULT_ONSET_FRAME: usize = 200;
pub const SEVERITY_LEVELS: usize = 5;

#[derive(Debug, Error)]
pub enum CorruptError {
    #[error("unknown corruption kind {0:?}")]
    UnknownKind(String),
    #[error("severity {0} outside 1..=5")]
    Severity(u8),
    #[error("severity table: {0}")]
    Table(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    GlassBlur,
    Fog,
    Brightness,
    Contrast,
    Pixelate,
    JpegCompression,
    SpeckleNoise,
    GaussianBlur,
    Spatter,
    Saturate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 14] = [
        Self::GaussianNoise,
        Self::ShotNoise,
        Self::ImpulseNoise,
        Self::DefocusBlur,
        Self::GlassBlur,
        Self::Fog,
        Self::Brightness,
        Self::Contrast,
        Self::Pixelate,
        Self::JpegCompression,
        Self::SpeckleNoise,
        Self::GaussianBlur,
        Self::Spatter,
        Self::Saturate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianNoise => "gaussian_noise",
            Self::ShotNoise => "shot_noise",
            Self::ImpulseNoise => "impulse_noise",
            Self::DefocusBlur => "defocus_blur",
            Self::GlassBlur => "glass_blur",
            Self::Fog => "fog",
            Self::Brightness => "brightness",
            Self::Contrast => "contrast",
            Self::Pixelate => "pixelate",
            Self::JpegCompression => "jpeg_compression",
            Self::SpeckleNoise => "speckle_noise",
            Self::GaussianBlur => "gaussian_blur",
            Self::Spatter => "spatter",
            Self::Saturate => "saturate",
        }
    }

    fn arity(self) -> usize {
        match self {
            Self::DefocusBlur | Self::Fog | Self::Saturate => 2,
            Self::GlassBlur => 3,
            Self::Spatter => 5,
            _ => 1,
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = CorruptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| CorruptError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    #[serde(default = "default_onset")]
    pub onset_frame: usize,
    pub seed: u64,
}

fn default_onset() -> usize {
    DEFAULT_ONSET_FRAME
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, onset_frame: usize, seed: u64) -> Result<Self, CorruptError> {
        let spec = Self {
            kind,
            severity,
            onset_frame,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CorruptError> {
        if !(1..=SEVERITY_LEVELS as u8).contains(&self.severity) {
            return Err(CorruptError::Severity(self.severity));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindEntry {
    pub formula: String,
    pub params: Vec<String>,
    pub levels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeverityTable {
    pub version: u32,
    pub kinds: BTreeMap<CorruptionKind, KindEntry>,
}

impl SeverityTable {
    /// Parses and validates: every kind present, five levels of the right
    /// arity, finite values, and each parameter column monotone in severity.
    pub fn from_json(text: &str) -> Result<Self, CorruptError> {
        let table: Self = serde_json::from_str(text).map_err(|e| CorruptError::Table(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorruptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The committed table.
    pub fn builtin() -> &'static SeverityTable {
        static TABLE: OnceLock<SeverityTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            Self::from_json(include_str!("../../data/severity.json")).expect("shipped severity table is valid")
        })
    }

    pub fn validate(&self) -> Result<(), CorruptError> {
        for kind in CorruptionKind::ALL {
            let entry = self
                .kinds
                .get(&kind)
                .ok_or_else(|| CorruptError::Table(format!("missing kind {kind}")))?;
            if entry.params.len() != kind.arity() {
                return Err(CorruptError::Table(format!(
                    "{kind}: expected {} parameters, got {}",
                    kind.arity(),
                    entry.params.len()
                )));
            }
            if entry.levels.len() != SEVERITY_LEVELS {
                return Err(CorruptError::Table(format!("{kind}: expected 5 levels")));
            }
            for (i, level) in entry.levels.iter().enumerate() {
                if level.len() != kind.arity() || level.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(CorruptError::Table(format!("{kind}: level {} malformed", i + 1)));
                }
            }
            for col in 0..kind.arity() {
                let vals: Vec<f64> = entry.levels.iter().map(|l| l[col]).collect();
                let up = vals.windows(2).all(|w| w[0] <= w[1]);
                let down = vals.windows(2).all(|w| w[0] >= w[1]);
                if !(up || down) {
                    return Err(CorruptError::Table(format!(
                        "{kind}: parameter {} is not monotone in severity",
                        entry.params[col]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn params(&self, kind: CorruptionKind, severity: u8) -> Result<&[f64], CorruptError> {
        if !(1..=SEVERITY_LEVELS as u8).contains(&severity) {
            return Err(CorruptError::Severity(severity));
        }
        Ok(&self.kinds[&kind].levels[severity as usize - 1])
    }
}

/// Applies `spec` at its severity from the committed table.
pub fn apply_corruption(spec: &CorruptionSpec, img: &Image, rng: &mut Rng) -> Image {
    let params = SeverityTable::builtin()
        .params(spec.kind, spec.severity)
        .expect("spec validated at construction");
    apply_with_params(spec.kind, params, img, rng)
}

/// Kind dispatch on an explicit parameter tuple (see the severity table for
/// each formula).
pub fn apply_with_params(kind: CorruptionKind, p: &[f64], img: &Image, rng: &mut Rng) -> Image {
    assert_eq!(p.len(), kind.arity(), "{kind}: wrong parameter count");
    match kind {
        CorruptionKind::GaussianNoise => map_components(img, |x| {
            let n: f64 = StandardNormal.sample(rng);
            x + p[0] * n
        }),
        CorruptionKind::ShotNoise => {
            let rate = p[0];
            map_components(img, |x| {
                let lambda = x * rate;
                if lambda <= 0.0 {
                    0.0
                } else {
                    Poisson::new(lambda).expect("positive rate").sample(rng) / rate
                }
            })
        }
        CorruptionKind::ImpulseNoise => map_components(img, |x| {
            if rng.next_f64() < p[0] {
                if rng.next_f64() < 0.5 {
                    0.0
                } else {
                    1.0
                }
            } else {
                x
            }
        }),
        CorruptionKind::SpeckleNoise => map_components(img, |x| {
            let n: f64 = StandardNormal.sample(rng);
            x + x * p[0] * n
        }),
        CorruptionKind::DefocusBlur => {
            let (k, side) = filters::disk_kernel(p[0], p[1]);
            filters::convolve(&Planes::from_image(img), &k, side).to_image()
        }
        CorruptionKind::GaussianBlur => filters::gaussian_blur(&Planes::from_image(img), p[0]).to_image(),
        CorruptionKind::GlassBlur => glass_blur(img, p[0], p[1].round() as usize, p[2].round() as usize, rng),
        CorruptionKind::Fog => fog(img, p[0], p[1], rng),
        CorruptionKind::Brightness => map_hsv(img, |h| h.v = (h.v + p[0]).clamp(0.0, 1.0)),
        CorruptionKind::Saturate => map_hsv(img, |h| h.s = (h.s * p[0] + p[1]).clamp(0.0, 1.0)),
        CorruptionKind::Contrast => contrast(img, p[0]),
        CorruptionKind::Pixelate => pixelate(img, p[0].round().max(1.0) as usize),
        CorruptionKind::JpegCompression => jpeg(img, p[0].round().clamp(1.0, 100.0) as u32),
        CorruptionKind::Spatter => spatter(img, p, rng),
    }
}

fn map_components(img: &Image, mut f: impl FnMut(f64) -> f64) -> Image {
    let mut planes = Planes::from_image(img);
    for v in planes.data.iter_mut() {
        *v = f(*v);
    }
    planes.to_image()
}

fn map_hsv(img: &Image, f: impl Fn(&mut Hsv)) -> Image {
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(CHANNELS) {
        let mut hsv = rgb_to_hsv([px[0], px[1], px[2]]);
        f(&mut hsv);
        px.copy_from_slice(&hsv_to_rgb(hsv));
    }
    out
}

fn contrast(img: &Image, factor: f64) -> Image {
    let planes = Planes::from_image(img);
    let n = (img.width() * img.height()) as f64;
    let mut means = [0.0; CHANNELS];
    for px in planes.data.chunks_exact(CHANNELS) {
        for c in 0..CHANNELS {
            means[c] += px[c];
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut out = planes;
    for px in out.data.chunks_exact_mut(CHANNELS) {
        for c in 0..CHANNELS {
            px[c] = (px[c] - means[c]) * factor + means[c];
        }
    }
    out.to_image()
}

/// Every pixel takes the value of its block's center sample. Re-applying
/// with the same block size is the identity.
pub fn pixelate(img: &Image, block: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    Image::from_fn(w, h, |x, y| {
        let sx = ((x / block) * block + block / 2).min(w - 1);
        let sy = ((y / block) * block + block / 2).min(h - 1);
        img.pixel(sx, sy)
    })
}

fn glass_blur(img: &Image, sigma: f64, max_delta: usize, iterations: usize, rng: &mut Rng) -> Image {
    let mut p = filters::gaussian_blur(&Planes::from_image(img), sigma);
    let (w, h) = (p.width, p.height);
    let d = max_delta as isize;
    if max_delta > 0 && w > 2 * max_delta && h > 2 * max_delta {
        for _ in 0..iterations {
            for y in (max_delta..h - max_delta).rev() {
                for x in (max_delta..w - max_delta).rev() {
                    let dx = rng.below(2 * max_delta as u64 + 1) as isize - d;
                    let dy = rng.below(2 * max_delta as u64 + 1) as isize - d;
                    let a = (y * w + x) * CHANNELS;
                    let b = (((y as isize + dy) as usize) * w + (x as isize + dx) as usize) * CHANNELS;
                    for c in 0..CHANNELS {
                        p.data.swap(a + c, b + c);
                    }
                }
            }
        }
    }
    filters::gaussian_blur(&p, sigma).to_image()
}

fn fog(img: &Image, amount: f64, decay: f64, rng: &mut Rng) -> Image {
    let mut p = Planes::from_image(img);
    let size = p.width.max(p.height).next_power_of_two().max(2);
    let plasma = filters::plasma_fractal(size, decay, rng);
    let max = p.data.iter().cloned().fold(0.0, f64::max);
    let scale = if max + amount > 0.0 { max / (max + amount) } else { 1.0 };
    for y in 0..p.height {
        for x in 0..p.width {
            let f = amount * plasma[y * size + x];
            for c in 0..CHANNELS {
                let i = (y * p.width + x) * CHANNELS + c;
                p.data[i] = (p.data[i] + f) * scale;
            }
        }
    }
    p.to_image()
}

const MUD: [f64; 3] = [63.0 / 255.0, 42.0 / 255.0, 20.0 / 255.0];

fn spatter(img: &Image, p: &[f64], rng: &mut Rng) -> Image {
    let (loc, scale, sigma, threshold, intensity) = (p[0], p[1], p[2], p[3], p[4]);
    let (w, h) = (img.width(), img.height());
    let field: Vec<f64> = (0..w * h)
        .map(|_| {
            let n: f64 = StandardNormal.sample(rng);
            loc + scale * n
        })
        .collect();
    let field = filters::blur_separable(&field, w, h, 1, &filters::gaussian_kernel(sigma));
    let mut out = Planes::from_image(img);
    for (i, &f) in field.iter().enumerate() {
        if f > threshold {
            for c in 0..CHANNELS {
                let v = &mut out.data[i * CHANNELS + c];
                *v = *v * (1.0 - intensity) + MUD[c] * intensity;
            }
        }
    }
    out.to_image()
}

fn jpeg(img: &Image, quality: u32) -> Image {
    let (w, h) = (img.width(), img.height());
    let ql = filters::scaled_quant(&filters::LUMA_QUANT, quality);
    let qc = filters::scaled_quant(&filters::CHROMA_QUANT, quality);
    let basis = filters::dct_basis();
    let mut ycc = vec![[0.0f64; 3]; w * h];
    for (i, px) in img.data().chunks_exact(CHANNELS).enumerate() {
        let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
        ycc[i] = [
            0.299 * r + 0.587 * g + 0.114 * b - 128.0,
            -0.168736 * r - 0.331264 * g + 0.5 * b,
            0.5 * r - 0.418688 * g - 0.081312 * b,
        ];
    }
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for c in 0..3 {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        let sx = (bx + x).min(w - 1);
                        let sy = (by + y).min(h - 1);
                        block[y * 8 + x] = ycc[sy * w + sx][c];
                    }
                }
                filters::dct_roundtrip(&mut block, if c == 0 { &ql } else { &qc }, &basis);
                for y in 0..8 {
                    for x in 0..8 {
                        if bx + x < w && by + y < h {
                            ycc[(by + y) * w + bx + x][c] = block[y * 8 + x];
                        }
                    }
                }
            }
        }
    }
    let mut out = img.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(CHANNELS).enumerate() {
        let [y, cb, cr] = ycc[i];
        let y = y + 128.0;
        let rgb = [y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb];
        for c in 0..CHANNELS {
            px[c] = rgb[c].round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Per-frame transformer: passthrough before the onset frame, corrupted with
/// an rng keyed by `(seed, frame)` from then on.
#[derive(Debug, Clone)]
pub struct CorruptionStream {
    spec: CorruptionSpec,
    params: Vec<f64>,
}

impl CorruptionStream {
    pub fn new(spec: CorruptionSpec) -> Result<Self, CorruptError> {
        Self::with_table(spec, SeverityTable::builtin())
    }

    pub fn with_table(spec: CorruptionSpec, table: &SeverityTable) -> Result<Self, CorruptError> {
        spec.validate()?;
        Ok(Self {
            spec,
            params: table.params(spec.kind, spec.severity)?.to_vec(),
        })
    }

    pub fn spec(&self) -> &CorruptionSpec {
        &self.spec
    }

    pub fn is_active(&self, frame: usize) -> bool {
        frame >= self.spec.onset_frame
    }

    pub fn apply(&self, frame: usize, img: &Image) -> Image {
        if !self.is_active(frame) {
            return img.clone();
        }
        let mut rng = Rng::derive(self.spec.seed, frame as u64);
        apply_with_params(self.spec.kind, &self.params, img, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{render_camera, Track, TrackSpec};

    fn test_image() -> Image {
        let track = Track::new(TrackSpec::circuit2()).unwrap();
        let (p, heading) = track.point_at(1.0);
        render_camera(
            &track,
            &crate::sim::VehicleState {
                x: p[0],
                y: p[1],
                heading: heading + 0.1,
                speed: 0.0,
            },
        )
    }

    #[test]
    fn shipped_table_is_valid() {
        let t = SeverityTable::builtin();
        assert_eq!(t.kinds.len(), 14);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in CorruptionKind::ALL {
            assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("motion_blur".parse::<CorruptionKind>().is_err());
    }

    #[test]
    fn non_monotone_table_rejected() {
        let mut t = SeverityTable::builtin().clone();
        t.kinds.get_mut(&CorruptionKind::GaussianNoise).unwrap().levels[2][0] = 0.5;
        assert!(t.validate().is_err());
        let mut t = SeverityTable::builtin().clone();
        t.kinds.remove(&CorruptionKind::Fog);
        assert!(t.validate().is_err());
    }

    #[test]
    fn severity_out_of_range() {
        assert!(CorruptionSpec::new(CorruptionKind::Fog, 0, 200, 1).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Fog, 6, 200, 1).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Fog, 5, 200, 1).is_ok());
    }

    #[test]
    fn brightness_keeps_white() {
        let white = Image::filled(16, 8, [255; 3]);
        for s in 1..=5 {
            let spec = CorruptionSpec::new(CorruptionKind::Brightness, s, 0, 0).unwrap();
            assert_eq!(apply_corruption(&spec, &white, &mut Rng::new(0)), white);
        }
    }

    #[test]
    fn gaussian_noise_grows_with_severity() {
        let img = test_image();
        let d = |s| {
            let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, s, 0, 42).unwrap();
            apply_corruption(&spec, &img, &mut Rng::new(42)).mean_abs_diff(&img)
        };
        assert!(d(5) > d(1));
    }

    #[test]
    fn distortion_non_decreasing_in_severity() {
        let img = test_image();
        for kind in CorruptionKind::ALL {
            let mut prev = 0.0;
            for s in 1..=5u8 {
                let spec = CorruptionSpec::new(kind, s, 0, 7).unwrap();
                let d = apply_corruption(&spec, &img, &mut Rng::derive(7, 0)).mean_abs_diff(&img);
                assert!(d >= prev, "{kind} severity {s}: {d} < {prev}");
                prev = d;
            }
        }
    }

    #[test]
    fn pixelate_is_idempotent() {
        let img = test_image();
        for s in 1..=5 {
            let block = SeverityTable::builtin().params(CorruptionKind::Pixelate, s).unwrap()[0] as usize;
            let spec = CorruptionSpec::new(CorruptionKind::Pixelate, s, 0, 0).unwrap();
            let once = apply_corruption(&spec, &img, &mut Rng::new(0));
            assert_eq!(once, pixelate(&img, block));
            assert_eq!(apply_corruption(&spec, &once, &mut Rng::new(0)), once);
        }
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let img = test_image();
        let cases: [(CorruptionKind, &[f64]); 10] = [
            (CorruptionKind::GaussianNoise, &[0.0]),
            (CorruptionKind::ImpulseNoise, &[0.0]),
            (CorruptionKind::SpeckleNoise, &[0.0]),
            (CorruptionKind::DefocusBlur, &[0.0, 0.0]),
            (CorruptionKind::GlassBlur, &[0.0, 0.0, 0.0]),
            (CorruptionKind::Fog, &[0.0, 2.0]),
            (CorruptionKind::Contrast, &[1.0]),
            (CorruptionKind::Pixelate, &[1.0]),
            (CorruptionKind::GaussianBlur, &[0.0]),
            (CorruptionKind::Spatter, &[0.65, 0.3, 3.0, 0.7, 0.0]),
        ];
        for (kind, p) in cases {
            assert_eq!(apply_with_params(kind, p, &img, &mut Rng::new(1)), img, "{kind}");
        }
    }

    #[test]
    fn outputs_stay_valid_on_extremes() {
        let black = Image::filled(16, 16, [0; 3]);
        let white = Image::filled(16, 16, [255; 3]);
        for kind in CorruptionKind::ALL {
            let spec = CorruptionSpec::new(kind, 5, 0, 3).unwrap();
            for img in [&black, &white] {
                let out = apply_corruption(&spec, img, &mut Rng::new(3));
                assert!(out.same_shape(img));
            }
        }
    }

    #[test]
    fn stream_passthrough_then_corrupt() {
        let img = test_image();
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, 200, 11).unwrap();
        let a = CorruptionStream::new(spec).unwrap();
        let b = CorruptionStream::new(spec).unwrap();
        assert_eq!(a.apply(0, &img), img);
        assert_eq!(a.apply(199, &img), img);
        let c200 = a.apply(200, &img);
        assert_ne!(c200, img);
        assert_eq!(c200, b.apply(200, &img));
        assert_ne!(a.apply(201, &img), c200);
    }
}
