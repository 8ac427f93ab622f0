//! The 10 FPS closed loop: render, corrupt, control, step.

use rand_distr::{Distribution, StandardNormal};

use super::recording::{Condition, FrameRecord, Recording, FPS};
use super::vehicle::{reference_driver, step_dynamics, VehicleState, FRAME_DT};
use super::{render_camera, SimError, Track};
use crate::control::{ControlOutput, Controller};
use crate::corrupt::{CorruptionSpec, CorruptionStream};
use crate::imgops::{Image, Rng};

const START_STREAM: u64 = 0x5354_4152;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartPose {
    /// Random arclength, small lateral and heading offsets, all from the seed.
    Sampled,
    Fixed(VehicleState),
}

#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub id: String,
    pub corruption: Option<CorruptionSpec>,
    pub max_frames: usize,
    pub seed: u64,
    pub record_labels: bool,
    pub start: StartPose,
}

impl EpisodeOptions {
    pub fn nominal(id: impl Into<String>, seed: u64, max_frames: usize) -> Self {
        Self {
            id: id.into(),
            corruption: None,
            max_frames,
            seed,
            record_labels: false,
            start: StartPose::Sampled,
        }
    }
}

/// What a driver sees on one frame. `state` is ground truth and only meant
/// for the reference driver.
pub struct FrameView<'a> {
    pub index: usize,
    pub image: &'a Image,
    pub state: &'a VehicleState,
}

pub fn start_state(track: &Track, opts: &EpisodeOptions) -> VehicleState {
    match opts.start {
        StartPose::Fixed(s) => s,
        StartPose::Sampled => {
            let mut rng = Rng::derive(opts.seed, START_STREAM);
            let (p, heading) = track.point_at(rng.uniform(0.0, track.perimeter()));
            let lateral = rng.uniform(-0.03, 0.03);
            VehicleState {
                x: p[0] - lateral * heading.sin(),
                y: p[1] + lateral * heading.cos(),
                heading: heading + rng.uniform(-0.05, 0.05),
                speed: 0.0,
            }
        }
    }
}

/// Drives an image-only controller.
pub fn run_episode<C: Controller + ?Sized>(track: &Track, controller: &C, opts: &EpisodeOptions) -> Result<Recording, SimError> {
    run_episode_with(track, opts, |view| controller.control(view.image))
}

/// Runs until the vehicle leaves the lane (that frame is recorded and is the
/// last) or `max_frames` frames have been recorded.
pub fn run_episode_with(
    track: &Track,
    opts: &EpisodeOptions,
    mut drive: impl FnMut(&FrameView) -> ControlOutput,
) -> Result<Recording, SimError> {
    let stream = opts.corruption.map(CorruptionStream::new).transpose()?;
    let mut state = start_state(track, opts);
    let mut frames = Vec::with_capacity(opts.max_frames.min(4096));
    let mut oob_frame = None;
    for index in 0..opts.max_frames {
        let raw = render_camera(track, &state);
        let image = match &stream {
            Some(s) => s.apply(index, &raw),
            None => raw,
        };
        let control = drive(&FrameView {
            index,
            image: &image,
            state: &state,
        });
        if !control.is_finite() {
            return Err(SimError::NonFinite {
                frame: index,
                steering: control.steering,
                throttle: control.throttle,
            });
        }
        let label = opts.record_labels.then(|| reference_driver(track, &state));
        let oob = track.is_out_of_bounds(state.x, state.y);
        frames.push(FrameRecord {
            index,
            image,
            control,
            label,
        });
        if oob {
            oob_frame = Some(index);
            break;
        }
        state = step_dynamics(&state, &control, FRAME_DT);
    }
    let condition = match opts.corruption {
        Some(c) => Condition::Anomaly {
            kind: c.kind,
            severity: c.severity,
            onset_frame: c.onset_frame,
        },
        None => Condition::Nominal,
    };
    Ok(Recording {
        id: opts.id.clone(),
        circuit_id: track.id().to_string(),
        seed: opts.seed,
        fps: FPS,
        condition,
        oob_frame,
        frames,
    })
}

/// Ornstein-Uhlenbeck steering perturbation for collecting recovery data.
#[derive(Debug, Clone)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    value: f64,
    rng: Rng,
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64, seed: u64) -> Self {
        Self {
            theta,
            sigma,
            value: 0.0,
            rng: Rng::new(seed),
        }
    }

    pub fn next(&mut self) -> f64 {
        let n: f64 = StandardNormal.sample(&mut self.rng);
        self.value += -self.theta * self.value + self.sigma * n;
        self.value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::FnController;
    use crate::sim::TrackSpec;

    #[test]
    fn reference_driver_completes_both_circuits() {
        for spec in [TrackSpec::circuit1(), TrackSpec::circuit2(), TrackSpec::circuit1().reversed()] {
            let track = Track::new(spec).unwrap();
            for seed in 0..3 {
                let opts = EpisodeOptions::nominal("ref", seed, 500);
                let rec = run_episode_with(&track, &opts, |v| reference_driver(&track, v.state)).unwrap();
                assert_eq!(rec.oob_frame, None, "{} seed {seed}", track.id());
                assert_eq!(rec.len(), 500);
            }
        }
    }

    #[test]
    fn constant_left_turn_leaves_the_lane() {
        let track = Track::new(TrackSpec::circuit2()).unwrap();
        let ctl = FnController(|_: &Image| ControlOutput {
            steering: 1.0,
            throttle: 1.0,
        });
        let rec = run_episode(&track, &ctl, &EpisodeOptions::nominal("spin", 1, 300)).unwrap();
        let oob = rec.oob_frame.expect("should leave the lane");
        assert_eq!(rec.len(), oob + 1);
        rec.validate().unwrap();
    }

    #[test]
    fn non_finite_controller_aborts() {
        let track = Track::new(TrackSpec::circuit1()).unwrap();
        let ctl = FnController(|_: &Image| ControlOutput {
            steering: f64::NAN,
            throttle: 0.5,
        });
        let err = run_episode(&track, &ctl, &EpisodeOptions::nominal("nan", 1, 10)).unwrap_err();
        assert!(matches!(err, SimError::NonFinite { frame: 0, .. }));
    }

    #[test]
    fn episodes_are_deterministic_on_disk() {
        let track = Track::new(TrackSpec::circuit1()).unwrap();
        let mut opts = EpisodeOptions::nominal("det", 17, 30);
        opts.record_labels = true;
        opts.corruption = Some(CorruptionSpec::new(crate::corrupt::CorruptionKind::ShotNoise, 2, 10, 5).unwrap());
        let run = || {
            let mut noise = OuNoise::new(0.2, 0.1, 3);
            run_episode_with(&track, &opts, |v| {
                let r = reference_driver(&track, v.state);
                ControlOutput::clamped(r.steering + noise.next(), r.throttle)
            })
            .unwrap()
        };
        let (a, b) = (run(), run());
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        a.save(da.path()).unwrap();
        b.save(db.path()).unwrap();
        for name in ["manifest.json", "controls.csv", "frames/000000.ppm", "frames/000029.ppm"] {
            assert_eq!(
                std::fs::read(da.path().join(name)).unwrap(),
                std::fs::read(db.path().join(name)).unwrap()
            );
        }
        assert_eq!(a.frames[9].image, render_camera(&track, &start_after(&track, &opts, &a, 9)));
    }

    fn start_after(track: &Track, opts: &EpisodeOptions, rec: &Recording, n: usize) -> VehicleState {
        let mut s = start_state(track, opts);
        for f in &rec.frames[..n] {
            s = step_dynamics(&s, &f.control, FRAME_DT);
        }
        s
    }
}
