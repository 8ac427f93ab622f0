//! Bit-deterministic image primitives shared by the metamorphic relations,
//! the corruption injector and the simulator.

mod hsv;
mod ppm;
mod rng;

use thiserror::Error;

pub use hsv::{hsv_to_rgb, rgb_to_hsv, Hsv, HsvBytes};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use rng::Rng;

/// Camera frame width in pixels.
pub const WIDTH: usize = 160;
/// Camera frame height in pixels.
pub const HEIGHT: usize = 120;
pub const CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("raster length {got} does not match {width}x{height}x3 = {expected}")]
    Size {
        width: usize,
        height: usize,
        expected: usize,
        got: usize,
    },
    #[error("malformed PPM: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major interleaved RGB raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width * height * CHANNELS;
        if data.len() != expected {
            return Err(ImageError::Size {
                width,
                height,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    /// Black frame at camera resolution.
    pub fn blank() -> Self {
        Self::filled(WIDTH, HEIGHT, [0, 0, 0])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Mean absolute per-component difference.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        let total: u64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.abs_diff(b) as u64)
            .sum();
        total as f64 / self.data.len() as f64
    }

    pub fn map_pixels(&self, mut f: impl FnMut([u8; 3]) -> [u8; 3]) -> Image {
        let mut out = self.clone();
        for px in out.data.chunks_exact_mut(CHANNELS) {
            let mapped = f([px[0], px[1], px[2]]);
            px.copy_from_slice(&mapped);
        }
        out
    }
}

/// Mirror about the vertical axis.
pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = img.clone();
    let w = img.width;
    for y in 0..img.height {
        let row = y * w * CHANNELS;
        for x in 0..w {
            let src = row + (w - 1 - x) * CHANNELS;
            let dst = row + x * CHANNELS;
            out.data[dst..dst + CHANNELS].copy_from_slice(&img.data[src..src + CHANNELS]);
        }
    }
    out
}

/// Saturating subtraction of `delta` from every component.
pub fn reduce_brightness(img: &Image, delta: u8) -> Image {
    let mut out = img.clone();
    for c in out.data.iter_mut() {
        *c = c.saturating_sub(delta);
    }
    out
}

/// Replace every pixel's HSV saturation with `s / 255`, keeping hue and value.
pub fn set_saturation(img: &Image, s: u8) -> Image {
    let sat = s as f64 / 255.0;
    img.map_pixels(|px| {
        let mut hsv = rgb_to_hsv(px);
        hsv.s = sat;
        hsv_to_rgb(hsv)
    })
}

/// Scale each pixel by `1 + r`, `r ~ U[-max_rate, max_rate)` drawn once per
/// pixel and shared by its three channels.
pub fn add_uniform_noise(img: &Image, max_rate: f64, rng: &mut Rng) -> Image {
    assert!((0.0..=1.0).contains(&max_rate), "max_rate must be in [0, 1]");
    img.map_pixels(|px| {
        let factor = 1.0 + rng.uniform(-max_rate, max_rate);
        px.map(|c| (c as f64 * factor).round().clamp(0.0, 255.0) as u8)
    })
}

/// Normalized `kw x kh` box filter with edge replication; means round half up.
pub fn box_blur(img: &Image, kw: usize, kh: usize) -> Image {
    assert!(kw % 2 == 1 && kh % 2 == 1, "kernel dimensions must be odd");
    let (w, h) = (img.width as isize, img.height as isize);
    let (rx, ry) = ((kw / 2) as isize, (kh / 2) as isize);
    let n = (kw * kh) as u32;
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u32; 3];
            for dy in -ry..=ry {
                let sy = (y + dy).clamp(0, h - 1) as usize;
                for dx in -rx..=rx {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    let p = img.pixel(sx, sy);
                    for c in 0..CHANNELS {
                        acc[c] += p[c] as u32;
                    }
                }
            }
            out.set_pixel(x as usize, y as usize, acc.map(|a| ((a + n / 2) / n) as u8));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, Strategy};

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..12, 1usize..9).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h * 3)
                .prop_map(move |data| Image::new(w, h, data).unwrap())
        })
    }

    #[test]
    fn flip_two_pixels() {
        let img = Image::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(flip_horizontal(&img).data(), &[4, 5, 6, 1, 2, 3]);
    }

    #[test]
    fn flip_fixed_point_on_symmetric_image() {
        let img = Image::from_fn(6, 3, |x, y| {
            let m = x.min(5 - x) as u8;
            [m * 40, y as u8, 7]
        });
        assert_eq!(flip_horizontal(&img), img);
    }

    #[test]
    fn brightness_examples() {
        let img = Image::new(1, 1, vec![200, 50, 77]).unwrap();
        assert_eq!(reduce_brightness(&img, 77).data(), &[123, 0, 0]);
        let black = Image::filled(3, 3, [0, 0, 0]);
        assert_eq!(reduce_brightness(&black, 77), black);
    }

    #[test]
    fn brightness_idempotence_only_in_degenerate_cases() {
        let img = Image::new(1, 1, vec![200, 150, 90]).unwrap();
        let once = reduce_brightness(&img, 77);
        assert_ne!(reduce_brightness(&once, 77), once);
        assert_eq!(reduce_brightness(&img, 0), img);
        let floor = Image::filled(2, 2, [0, 0, 0]);
        assert_eq!(reduce_brightness(&reduce_brightness(&floor, 77), 77), floor);
    }

    #[test]
    fn saturation_gray_stays_gray() {
        let img = Image::filled(2, 2, [128, 128, 128]);
        assert_eq!(set_saturation(&img, 0), img);
    }

    #[test]
    fn saturation_of_pure_red() {
        let img = Image::new(1, 1, vec![255, 0, 0]).unwrap();
        let out = set_saturation(&img, 50).pixel(0, 0);
        assert_eq!(out[0], 255);
        let spread = out.iter().max().unwrap() - out.iter().min().unwrap();
        assert!((49..=51).contains(&spread), "spread {spread}");
    }

    #[test]
    fn saturation_gray_gets_red_tint() {
        // hue 0 is kept for achromatic pixels
        let out = set_saturation(&Image::filled(1, 1, [200, 200, 200]), 50).pixel(0, 0);
        assert_eq!(out[0], 200);
        assert!(out[1] < 200 && out[1] == out[2]);
    }

    #[test]
    fn noise_zero_rate_is_identity() {
        let img = Image::from_fn(16, 8, |x, y| [(x * 13) as u8, (y * 31) as u8, 200]);
        let mut rng = Rng::new(42);
        assert_eq!(add_uniform_noise(&img, 0.0, &mut rng), img);
    }

    #[test]
    fn noise_on_black_is_black() {
        let img = Image::filled(8, 8, [0, 0, 0]);
        assert_eq!(add_uniform_noise(&img, 0.2, &mut Rng::new(1)), img);
    }

    #[test]
    fn blur_examples() {
        let uniform = Image::filled(7, 4, [10, 20, 30]);
        assert_eq!(box_blur(&uniform, 5, 1), uniform);
        let img = Image::from_fn(9, 5, |x, y| [(x * y) as u8, x as u8, y as u8]);
        assert_eq!(box_blur(&img, 1, 1), img);
        let row = Image::from_fn(5, 1, |x, _| if x == 2 { [255; 3] } else { [0; 3] });
        assert_eq!(box_blur(&row, 5, 1).pixel(2, 0), [51, 51, 51]);
    }

    #[test]
    fn blur_preserves_mean_on_interior_dominated_image() {
        let img = Image::from_fn(WIDTH, HEIGHT, |x, y| {
            [((x * 7 + y * 3) % 256) as u8, ((x ^ y) % 256) as u8, 90]
        });
        let blurred = box_blur(&img, 5, 1);
        for c in 0..3 {
            let mean = |im: &Image| {
                im.data().iter().skip(c).step_by(3).map(|&v| v as f64).sum::<f64>()
                    / (WIDTH * HEIGHT) as f64
            };
            assert!((mean(&img) - mean(&blurred)).abs() <= 1.0);
        }
    }

    proptest! {
        #[test]
        fn flip_is_involution(img in arb_image()) {
            prop_assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
        }

        #[test]
        fn noise_bounded_by_51(img in arb_image(), seed in any::<u64>()) {
            let out = add_uniform_noise(&img, 0.2, &mut Rng::new(seed));
            for (a, b) in img.data().iter().zip(out.data()) {
                prop_assert!(a.abs_diff(*b) <= 51);
            }
        }

        #[test]
        fn saturation_roundtrip_within_one(px in any::<[u8; 3]>()) {
            let s = rgb_to_hsv(px).quantize().s;
            let img = Image::new(1, 1, px.to_vec()).unwrap();
            let out = set_saturation(&img, s).pixel(0, 0);
            for c in 0..3 {
                prop_assert!(px[c].abs_diff(out[c]) <= 1, "{:?} -> {:?}", px, out);
            }
        }

        #[test]
        fn operations_are_pure(img in arb_image(), seed in any::<u64>()) {
            prop_assert_eq!(set_saturation(&img, 50), set_saturation(&img, 50));
            prop_assert_eq!(box_blur(&img, 5, 1), box_blur(&img, 5, 1));
            prop_assert_eq!(
                add_uniform_noise(&img, 0.2, &mut Rng::new(seed)),
                add_uniform_noise(&img, 0.2, &mut Rng::new(seed))
            );
        }
    }
}
