//! Forward-facing pinhole camera over a flat painted floor.
//!
//! Mounted 0.2 m above ground, pitched 25 degrees down, 60 degree horizontal
//! field of view. Ground beyond 3 m and everything above the horizon is
//! drawn in the backdrop color. No anti-aliasing: each pixel samples the
//! ground point hit by the ray through its center.

use super::track::Track;
use super::VehicleState;
use crate::imgops::{Image, HEIGHT, WIDTH};

pub const CAMERA_HEIGHT: f64 = 0.2;
pub const CAMERA_PITCH_DEG: f64 = 25.0;
pub const CAMERA_HFOV_DEG: f64 = 60.0;
pub const FAR_CLIP: f64 = 3.0;
pub const BACKDROP: [u8; 3] = [150, 156, 168];

pub fn render_camera(track: &Track, state: &VehicleState) -> Image {
    let spec = track.spec();
    let focal = (WIDTH as f64 / 2.0) / (CAMERA_HFOV_DEG.to_radians() / 2.0).tan();
    let (sp, cp) = CAMERA_PITCH_DEG.to_radians().sin_cos();
    let (sh, ch) = (state.heading.sin(), state.heading.cos());
    let reach = track.paint_reach();
    let cx = WIDTH as f64 / 2.0;
    let cy = HEIGHT as f64 / 2.0;

    let mut img = Image::filled(WIDTH, HEIGHT, BACKDROP);
    for v in 0..HEIGHT {
        let yc = (v as f64 + 0.5 - cy) / focal;
        let down = sp + yc * cp;
        if down <= 0.0 {
            continue;
        }
        let t = CAMERA_HEIGHT / down;
        let fwd = t * (cp - yc * sp);
        if fwd > FAR_CLIP {
            continue;
        }
        let base_x = state.x + fwd * ch;
        let base_y = state.y + fwd * sh;
        for u in 0..WIDTH {
            let xc = (u as f64 + 0.5 - cx) / focal;
            let left = -(t * xc);
            let wx = base_x - left * sh;
            let wy = base_y + left * ch;
            let color = match track.project_within(wx, wy, reach) {
                Some(p) if track.is_tape(&p) => spec.tape_color,
                _ => spec.floor_color,
            };
            img.set_pixel(u, v, color);
        }
    }
    img
}
