//! Differential-drive kinematics and the pure-pursuit reference driver.

use serde::{Deserialize, Serialize};

use super::track::Track;
use crate::control::ControlOutput;

pub const MAX_SPEED: f64 = 0.4;
/// Yaw rate at full steering (rad/s).
pub const MAX_YAW_RATE: f64 = 1.5;
pub const FRAME_DT: f64 = 0.1;

/// Pure-pursuit lookahead along the centerline (meters).
pub const LOOKAHEAD: f64 = 0.5;
/// Window over which upcoming curvature slows the reference driver.
pub const CURVATURE_WINDOW: f64 = 1.0;
/// Throttle lost per radian of turning inside the window.
pub const CURVATURE_GAIN: f64 = 0.35;
pub const MIN_THROTTLE: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl VehicleState {
    /// Mirror across the world x axis (pairs with [`super::TrackSpec::mirrored`]).
    pub fn mirrored(&self) -> Self {
        Self {
            x: self.x,
            y: -self.y,
            heading: -self.heading,
            speed: self.speed,
        }
    }
}

/// Semi-implicit Euler: speed and heading update first, position integrates
/// with the new values.
pub fn step_dynamics(state: &VehicleState, control: &ControlOutput, dt: f64) -> VehicleState {
    assert!(dt > 0.0, "dt must be positive");
    let speed = control.throttle.clamp(0.0, 1.0) * MAX_SPEED;
    let heading = state.heading + control.steering.clamp(-1.0, 1.0) * MAX_YAW_RATE * dt;
    VehicleState {
        x: state.x + speed * heading.cos() * dt,
        y: state.y + speed * heading.sin() * dt,
        heading,
        speed,
    }
}

/// Geometric expert used for labels: pure pursuit towards a point
/// [`LOOKAHEAD`] meters ahead on the centerline, slowing down in proportion
/// to the turning in the next [`CURVATURE_WINDOW`] meters.
pub fn reference_driver(track: &Track, state: &VehicleState) -> ControlOutput {
    let proj = track.project(state.x, state.y);
    let turning = track.turning_ahead(proj.s, CURVATURE_WINDOW);
    let throttle = (1.0 - CURVATURE_GAIN * turning).clamp(MIN_THROTTLE, 1.0);

    let (target, _) = track.point_at(proj.s + LOOKAHEAD);
    let (sh, ch) = (state.heading.sin(), state.heading.cos());
    let dx = target[0] - state.x;
    let dy = target[1] - state.y;
    let ahead = dx * ch + dy * sh;
    let left = -dx * sh + dy * ch;
    let dist_sq = ahead * ahead + left * left;
    let curvature = if dist_sq > 0.0 { 2.0 * left / dist_sq } else { 0.0 };
    let yaw_rate = curvature * throttle * MAX_SPEED;
    ControlOutput::clamped(yaw_rate / MAX_YAW_RATE, throttle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::track::{BoundaryStyle, TrackSpec};
    use std::f64::consts::PI;

    fn long_straight() -> Track {
        let mut pts = Vec::new();
        for k in 0..200 {
            pts.push([k as f64 * 0.1, 0.0]);
        }
        for k in 0..100 {
            pts.push([20.0, k as f64 * 0.1]);
        }
        for k in 0..200 {
            pts.push([20.0 - k as f64 * 0.1, 10.0]);
        }
        for k in 0..100 {
            pts.push([0.0, 10.0 - k as f64 * 0.1]);
        }
        Track::new(TrackSpec {
            id: "straight".into(),
            centerline: pts,
            lane_half_width: 0.3,
            tape_half_width: 0.025,
            boundary_style: BoundaryStyle::Solid,
            inner_line: None,
            tape_color: [255; 3],
            floor_color: [0; 3],
        })
        .unwrap()
    }

    #[test]
    fn zero_throttle_stays_put() {
        let s = VehicleState {
            x: 1.0,
            y: 2.0,
            heading: 0.3,
            speed: 0.2,
        };
        let next = step_dynamics(&s, &ControlOutput { steering: 0.5, throttle: 0.0 }, 0.1);
        assert_eq!((next.x, next.y), (1.0, 2.0));
        assert_eq!(next.speed, 0.0);
    }

    #[test]
    fn full_throttle_straight() {
        let next = step_dynamics(
            &VehicleState::default(),
            &ControlOutput {
                steering: 0.0,
                throttle: 1.0,
            },
            0.1,
        );
        assert!((next.x - 0.04).abs() < 1e-15);
        assert_eq!(next.y, 0.0);
    }

    #[test]
    fn pure_rotation_by_pi() {
        let mut s = VehicleState::default();
        let steps = 1000;
        let dt = PI / MAX_YAW_RATE / steps as f64;
        for _ in 0..steps {
            s = step_dynamics(&s, &ControlOutput { steering: 1.0, throttle: 0.0 }, dt);
        }
        assert!((s.heading - PI).abs() < 1e-9);
    }

    #[test]
    fn aligned_on_straight_goes_straight_at_full_throttle() {
        let t = long_straight();
        let c = reference_driver(
            &t,
            &VehicleState {
                x: 5.0,
                y: 0.0,
                heading: 0.0,
                speed: 0.0,
            },
        );
        assert_eq!(c.steering, 0.0);
        assert_eq!(c.throttle, 1.0);
    }

    #[test]
    fn displaced_left_steers_right() {
        let t = long_straight();
        let c = reference_driver(
            &t,
            &VehicleState {
                x: 5.0,
                y: 0.1,
                heading: 0.0,
                speed: 0.0,
            },
        );
        assert!(c.steering < 0.0);
    }

    #[test]
    fn slows_down_for_curves() {
        let t = long_straight();
        let c = reference_driver(
            &t,
            &VehicleState {
                x: 19.7,
                y: 0.0,
                heading: 0.0,
                speed: 0.0,
            },
        );
        assert!(c.throttle < 1.0);
        assert!(c.steering > 0.0);
    }
}
