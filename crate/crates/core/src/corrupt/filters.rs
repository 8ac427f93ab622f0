//! Float-plane helpers for the corruption kernels: convolution, gaussian
//! blur, diamond-square plasma, and the 8x8 DCT.

use std::f64::consts::PI;

use crate::imgops::{Image, Rng, CHANNELS};

/// Interleaved RGB in `[0, 1]` (values may leave the range mid-computation).
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn from_image(img: &Image) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Image::new(self.width, self.height, data).expect("planes keep their shape")
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }
}

/// Normalized 1-D gaussian taps with radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable blur of a `channels`-interleaved plane, edge replication.
pub fn blur_separable(data: &[f64], width: usize, height: usize, channels: usize, taps: &[f64]) -> Vec<f64> {
    if taps.len() == 1 {
        return data.to_vec();
    }
    let r = (taps.len() / 2) as isize;
    let (w, h) = (width as isize, height as isize);
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..w {
            for c in 0..channels {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let sx = (x + k as isize - r).clamp(0, w - 1) as usize;
                    acc += t * data[(y * width + sx) * channels + c];
                }
                tmp[(y * width + x as usize) * channels + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..width {
            for c in 0..channels {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let sy = (y + k as isize - r).clamp(0, h - 1) as usize;
                    acc += t * tmp[(sy * width + x) * channels + c];
                }
                out[(y as usize * width + x) * channels + c] = acc;
            }
        }
    }
    out
}

pub fn gaussian_blur(p: &Planes, sigma: f64) -> Planes {
    Planes {
        width: p.width,
        height: p.height,
        data: blur_separable(&p.data, p.width, p.height, CHANNELS, &gaussian_kernel(sigma)),
    }
}

/// Square 2-D kernel (odd side) correlated with each channel, edge replication.
pub fn convolve(p: &Planes, kernel: &[f64], side: usize) -> Planes {
    let r = (side / 2) as isize;
    let (w, h) = (p.width as isize, p.height as isize);
    let mut out = vec![0.0; p.data.len()];
    let taps: Vec<(isize, isize, f64)> = kernel
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| ((i % side) as isize - r, (i / side) as isize - r, v))
        .collect();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; CHANNELS];
            for &(dx, dy, v) in &taps {
                let sx = (x + dx).clamp(0, w - 1) as usize;
                let sy = (y + dy).clamp(0, h - 1) as usize;
                let base = (sy * p.width + sx) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += v * p.data[base + c];
                }
            }
            let base = (y as usize * p.width + x as usize) * CHANNELS;
            out[base..base + CHANNELS].copy_from_slice(&acc);
        }
    }
    Planes {
        width: p.width,
        height: p.height,
        data: out,
    }
}

/// Aliased disk of `radius` smoothed by a 3x3 gaussian of `alias_sigma`,
/// normalized to unit sum. Returns `(kernel, side)`.
pub fn disk_kernel(radius: f64, alias_sigma: f64) -> (Vec<f64>, usize) {
    let r = radius.max(0.0).ceil() as isize + 1;
    let side = (2 * r + 1) as usize;
    let mut disk = vec![0.0; side * side];
    for y in -r..=r {
        for x in -r..=r {
            if ((x * x + y * y) as f64) <= radius * radius {
                disk[((y + r) as usize) * side + (x + r) as usize] = 1.0;
            }
        }
    }
    if alias_sigma > 0.0 {
        let g: Vec<f64> = (-1..=1_i32)
            .map(|i| (-((i * i) as f64) / (2.0 * alias_sigma * alias_sigma)).exp())
            .collect();
        let gs: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|v| v / gs).collect();
        let mut smooth = vec![0.0; side * side];
        for y in 0..side as isize {
            for x in 0..side as isize {
                let mut acc = 0.0;
                for dy in -1..=1_isize {
                    for dx in -1..=1_isize {
                        let (sx, sy) = (x + dx, y + dy);
                        if sx >= 0 && sy >= 0 && (sx as usize) < side && (sy as usize) < side {
                            acc += g[(dx + 1) as usize] * g[(dy + 1) as usize] * disk[sy as usize * side + sx as usize];
                        }
                    }
                }
                smooth[y as usize * side + x as usize] = acc;
            }
        }
        disk = smooth;
    }
    let sum: f64 = disk.iter().sum();
    disk.iter_mut().for_each(|v| *v /= sum);
    (disk, side)
}

/// Diamond-square fractal on a `size x size` torus (size a power of two),
/// normalized to `[0, 1]`. Row-major.
pub fn plasma_fractal(size: usize, decay: f64, rng: &mut Rng) -> Vec<f64> {
    assert!(size.is_power_of_two() && size >= 2, "plasma size must be a power of two");
    let mut map = vec![0.0f64; size * size];
    let idx = |y: usize, x: usize| (y % size) * size + (x % size);
    let mut step = size;
    let mut wibble = 100.0;
    while step >= 2 {
        let half = step / 2;
        // squares: centers from the four corners
        for y in (0..size).step_by(step) {
            for x in (0..size).step_by(step) {
                let sum = map[idx(y, x)] + map[idx(y + step, x)] + map[idx(y, x + step)] + map[idx(y + step, x + step)];
                map[idx(y + half, x + half)] = sum / 4.0 + wibble * rng.uniform(-wibble, wibble);
            }
        }
        // diamonds: edge midpoints from their two corners and two centers
        for y in (0..size).step_by(step) {
            for x in (0..size).step_by(step) {
                let top = map[idx(y, x)] + map[idx(y, x + step)] + map[idx(y + half, x + half)]
                    + map[idx(y + size - half, x + half)];
                let left = map[idx(y, x)] + map[idx(y + step, x)] + map[idx(y + half, x + half)]
                    + map[idx(y + half, x + size - half)];
                map[idx(y, x + half)] = top / 4.0 + wibble * rng.uniform(-wibble, wibble);
                map[idx(y + half, x)] = left / 4.0 + wibble * rng.uniform(-wibble, wibble);
            }
        }
        step = half;
        wibble /= decay;
    }
    let min = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    map.iter().map(|v| (v - min) / span).collect()
}

pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22,
    29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103,
    121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

pub const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
];

/// IJG quality scaling of a base quantization table.
pub fn scaled_quant(base: &[u16; 64], quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

/// Orthonormal DCT-II basis: `basis[u * 8 + x]`.
pub fn dct_basis() -> [f64; 64] {
    let mut b = [0.0; 64];
    for u in 0..8 {
        let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for x in 0..8 {
            b[u * 8 + x] = alpha * (((2 * x + 1) as f64 * u as f64 * PI) / 16.0).cos();
        }
    }
    b
}

/// Forward 2-D DCT followed by quantize/dequantize and the inverse, in place.
pub fn dct_roundtrip(block: &mut [f64; 64], quant: &[f64; 64], basis: &[f64; 64]) {
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                let by = basis[v * 8 + y];
                for x in 0..8 {
                    acc += by * basis[u * 8 + x] * block[y * 8 + x];
                }
            }
            let q = quant[v * 8 + u];
            tmp[v * 8 + u] = (acc / q).round() * q;
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                let by = basis[v * 8 + y];
                for u in 0..8 {
                    acc += by * basis[u * 8 + x] * tmp[v * 8 + u];
                }
            }
            block[y * 8 + x] = acc;
        }
    }
}
