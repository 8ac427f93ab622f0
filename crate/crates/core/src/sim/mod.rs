//! Deterministic 2D lane-keeping world: track geometry, differential-drive
//! kinematics, a forward camera, the reference driver, and episode
//! recording.

pub mod camera;
pub mod episode;
pub mod recording;
pub mod track;
pub mod vehicle;

use thiserror::Error;

pub use camera::render_camera;
pub use episode::{run_episode, run_episode_with, EpisodeOptions, FrameView, OuNoise, StartPose};
pub use recording::{Condition, FrameRecord, Manifest, Recording, FPS};
pub use track::{BoundaryStyle, Projection, Track, TrackSpec};
pub use vehicle::{reference_driver, step_dynamics, VehicleState, FRAME_DT};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("track: {0}")]
    Track(String),
    #[error("controller returned non-finite output ({steering}, {throttle}) at frame {frame}")]
    NonFinite { frame: usize, steering: f64, throttle: f64 },
    #[error("recording format: {0}")]
    Format(String),
    #[error("image: {0}")]
    Image(#[from] crate::imgops::ImageError),
    #[error("corruption: {0}")]
    Corrupt(#[from] crate::corrupt::CorruptError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgops::{flip_horizontal, Rng};

    fn random_state(track: &Track, rng: &mut Rng) -> VehicleState {
        let (p, heading) = track.point_at(rng.uniform(0.0, track.perimeter()));
        let lateral = rng.uniform(-0.25, 0.25);
        VehicleState {
            x: p[0] - lateral * heading.sin(),
            y: p[1] + lateral * heading.cos(),
            heading: heading + rng.uniform(-0.4, 0.4),
            speed: rng.uniform(0.0, 0.4),
        }
    }

    #[test]
    fn render_is_deterministic() {
        let track = Track::new(TrackSpec::circuit1()).unwrap();
        let mut rng = Rng::new(5);
        let s = random_state(&track, &mut rng);
        assert_eq!(render_camera(&track, &s), render_camera(&track, &s));
    }

    #[test]
    fn straight_centerline_view_is_symmetric() {
        let mut pts = Vec::new();
        for k in 0..100 {
            pts.push([k as f64 * 0.1, 0.0]);
        }
        for k in 0..30 {
            pts.push([10.0, k as f64 * 0.1]);
        }
        for k in 0..100 {
            pts.push([10.0 - k as f64 * 0.1, 3.0]);
        }
        for k in 0..30 {
            pts.push([0.0, 3.0 - k as f64 * 0.1]);
        }
        let spec = TrackSpec {
            id: "straight".into(),
            centerline: pts,
            lane_half_width: 0.3,
            tape_half_width: 0.025,
            boundary_style: BoundaryStyle::Solid,
            inner_line: None,
            tape_color: [255; 3],
            floor_color: [10; 3],
        };
        let track = Track::new(spec).unwrap();
        let img = render_camera(
            &track,
            &VehicleState {
                x: 3.0,
                y: 0.0,
                heading: 0.0,
                speed: 0.0,
            },
        );
        assert_eq!(flip_horizontal(&img), img);
        assert!(img.data().contains(&255));
    }

    #[test]
    fn render_commutes_with_mirroring() {
        for spec in [TrackSpec::circuit1(), TrackSpec::circuit2()] {
            let track = Track::new(spec.clone()).unwrap();
            let mirror = Track::new(spec.mirrored()).unwrap();
            let mut rng = Rng::new(99);
            for _ in 0..20 {
                let s = random_state(&track, &mut rng);
                let a = render_camera(&mirror, &s.mirrored());
                assert_eq!(a, flip_horizontal(&render_camera(&track, &s)));
            }
        }
    }

    #[test]
    fn reference_driver_commutes_with_mirroring() {
        for spec in [TrackSpec::circuit1(), TrackSpec::circuit2()] {
            let track = Track::new(spec.clone()).unwrap();
            let mirror = Track::new(spec.mirrored()).unwrap();
            let mut rng = Rng::new(7);
            for _ in 0..200 {
                let s = random_state(&track, &mut rng);
                let a = reference_driver(&track, &s);
                let b = reference_driver(&mirror, &s.mirrored());
                assert_eq!(b.steering, -a.steering);
                assert_eq!(b.throttle, a.throttle);
            }
        }
    }
}
