//! RGB <-> HSV conversion on the hexagonal cone.
//!
//! [`Hsv`] keeps hue in degrees and saturation/value in `[0, 1]`.
//! [`HsvBytes`] is the byte-quantized form: hue stored as degrees / 2
//! (0..=179), saturation and value scaled to 0..=255.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    /// Degrees in `[0, 360)`.
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HsvBytes {
    pub h: u8,
    pub s: u8,
    pub v: u8,
}

/// Grayscale pixels (max == min) get hue 0 and saturation 0.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        let h = 60.0 * ((g - b) / delta);
        if h < 0.0 {
            h + 360.0
        } else {
            h
        }
    } else if max == g {
        60.0 * ((b - r) / delta) + 120.0
    } else {
        60.0 * ((r - g) / delta) + 240.0
    };
    Hsv { h: h % 360.0, s, v }
}

pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    let s = hsv.s.clamp(0.0, 1.0);
    let v = hsv.v.clamp(0.0, 1.0);
    let c = v * s;
    let hp = hsv.h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r1), q(g1), q(b1)]
}

impl Hsv {
    pub fn quantize(self) -> HsvBytes {
        HsvBytes {
            h: ((self.h / 2.0).round() as u32 % 180) as u8,
            s: (self.s * 255.0).round().clamp(0.0, 255.0) as u8,
            v: (self.v * 255.0).round().clamp(0.0, 255.0) as u8,
        }
    }
}

impl HsvBytes {
    pub fn to_hsv(self) -> Hsv {
        Hsv {
            h: self.h as f64 * 2.0,
            s: self.s as f64 / 255.0,
            v: self.v as f64 / 255.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_black_red() {
        let w = rgb_to_hsv([255, 255, 255]).quantize();
        assert_eq!((w.s, w.v), (0, 255));
        let k = rgb_to_hsv([0, 0, 0]).quantize();
        assert_eq!((k.s, k.v), (0, 0));
        let r = rgb_to_hsv([255, 0, 0]).quantize();
        assert_eq!(r, HsvBytes { h: 0, s: 255, v: 255 });
    }

    #[test]
    fn hue_quantized_to_half_degrees() {
        // Pure blue is 240 degrees -> 120.
        assert_eq!(rgb_to_hsv([0, 0, 255]).quantize().h, 120);
        assert_eq!(rgb_to_hsv([0, 255, 0]).quantize().h, 60);
    }

    #[test]
    fn float_roundtrip_is_exact_after_rounding() {
        for r in (0..=255).step_by(5) {
            for g in (0..=255).step_by(15) {
                for b in (0..=255).step_by(17) {
                    let px = [r as u8, g as u8, b as u8];
                    assert_eq!(hsv_to_rgb(rgb_to_hsv(px)), px);
                }
            }
        }
    }
}
