//! Recordings: the unit of evaluation, and their on-disk layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/controls.csv      index,steering,throttle,label_steering,label_throttle
//! <dir>/frames/000000.ppm
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::control::ControlOutput;
use crate::corrupt::CorruptionKind;
use crate::imgops::{encode_ppm, read_ppm, Image};
use crate::mutate::MutationOperator;
use crate::util::write_atomic;

pub const FPS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    Nominal,
    Anomaly {
        kind: CorruptionKind,
        severity: u8,
        onset_frame: usize,
    },
    Mutant {
        operator: MutationOperator,
        param: f64,
        model_id: String,
    },
}

impl Condition {
    pub fn is_nominal(&self) -> bool {
        matches!(self, Condition::Nominal)
    }

    pub fn onset_frame(&self) -> Option<usize> {
        match self {
            Condition::Anomaly { onset_frame, .. } => Some(*onset_frame),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub image: Image,
    pub control: ControlOutput,
    pub label: Option<ControlOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub id: String,
    pub fps: u32,
    pub condition: Condition,
    pub seed: u64,
    pub circuit_id: String,
    pub onset_frame: Option<usize>,
    pub oob_frame: Option<usize>,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub circuit_id: String,
    pub seed: u64,
    pub fps: u32,
    pub condition: Condition,
    pub oob_frame: Option<usize>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ControlRow {
    index: usize,
    steering: f64,
    throttle: f64,
    label_steering: Option<f64>,
    label_throttle: Option<f64>,
}

impl Recording {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            id: self.id.clone(),
            fps: self.fps,
            condition: self.condition.clone(),
            seed: self.seed,
            circuit_id: self.circuit_id.clone(),
            onset_frame: self.condition.onset_frame(),
            oob_frame: self.oob_frame,
            n_frames: self.frames.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames are consecutive from 0 and nothing follows the out-of-bounds frame.
    pub fn validate(&self) -> Result<(), SimError> {
        if let Some(i) = self.frames.iter().enumerate().position(|(i, f)| f.index != i) {
            return Err(SimError::Format(format!("{}: frame {i} out of sequence", self.id)));
        }
        if let Some(oob) = self.oob_frame {
            if oob + 1 != self.frames.len() {
                return Err(SimError::Format(format!(
                    "{}: oob frame {oob} is not the last of {} frames",
                    self.id,
                    self.frames.len()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SimError> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("frames"))?;
        let mut csv = csv::Writer::from_writer(Vec::new());
        for f in &self.frames {
            csv.serialize(ControlRow {
                index: f.index,
                steering: f.control.steering,
                throttle: f.control.throttle,
                label_steering: f.label.map(|l| l.steering),
                label_throttle: f.label.map(|l| l.throttle),
            })
            .map_err(|e| SimError::Format(e.to_string()))?;
            write_atomic(&dir.join(frame_name(f.index)), &encode_ppm(&f.image))?;
        }
        let csv = csv.into_inner().map_err(|e| SimError::Format(e.to_string()))?;
        write_atomic(&dir.join("controls.csv"), &csv)?;
        let manifest = serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes");
        write_atomic(&dir.join("manifest.json"), &manifest)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SimError> {
        let dir = dir.as_ref();
        let manifest = load_manifest(dir)?;
        let mut reader = csv::Reader::from_path(dir.join("controls.csv")).map_err(|e| SimError::Format(e.to_string()))?;
        let mut frames = Vec::with_capacity(manifest.n_frames);
        for row in reader.deserialize::<ControlRow>() {
            let row = row.map_err(|e| SimError::Format(e.to_string()))?;
            let path = dir.join(frame_name(row.index));
            let image = read_ppm(&path)
                .map_err(|e| SimError::Format(format!("missing or bad frame {}: {e}", path.display())))?;
            let label = match (row.label_steering, row.label_throttle) {
                (Some(s), Some(t)) => Some(ControlOutput {
                    steering: s,
                    throttle: t,
                }),
                (None, None) => None,
                _ => return Err(SimError::Format(format!("frame {}: half a label", row.index))),
            };
            frames.push(FrameRecord {
                index: row.index,
                image,
                control: ControlOutput {
                    steering: row.steering,
                    throttle: row.throttle,
                },
                label,
            });
        }
        if frames.len() != manifest.n_frames {
            return Err(SimError::Format(format!(
                "{}: manifest lists {} frames, found {}",
                manifest.id,
                manifest.n_frames,
                frames.len()
            )));
        }
        let rec = Self {
            id: manifest.id,
            circuit_id: manifest.circuit_id,
            seed: manifest.seed,
            fps: manifest.fps,
            condition: manifest.condition,
            oob_frame: manifest.oob_frame,
            frames,
        };
        rec.validate()?;
        Ok(rec)
    }
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, SimError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| SimError::Format(format!("manifest: {e}")))
}

fn frame_name(index: usize) -> String {
    format!("frames/{index:06}.ppm")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Recording {
        let frames = (0..3)
            .map(|i| FrameRecord {
                index: i,
                image: Image::filled(4, 3, [i as u8, 2, 3]),
                control: ControlOutput {
                    steering: 0.1 * i as f64 - 0.05,
                    throttle: 0.7,
                },
                label: (i != 1).then_some(ControlOutput {
                    steering: -0.3,
                    throttle: 1.0,
                }),
            })
            .collect();
        Recording {
            id: "r1".into(),
            circuit_id: "circuit-1".into(),
            seed: 9,
            fps: FPS,
            condition: Condition::Anomaly {
                kind: CorruptionKind::Fog,
                severity: 3,
                onset_frame: 1,
            },
            oob_frame: Some(2),
            frames,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = sample();
        rec.save(dir.path()).unwrap();
        assert_eq!(Recording::load(dir.path()).unwrap(), rec);
        let m = load_manifest(dir.path()).unwrap();
        assert_eq!(m.onset_frame, Some(1));
    }

    #[test]
    fn missing_frame_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("frames/000001.ppm")).unwrap();
        assert!(Recording::load(dir.path()).is_err());
    }

    #[test]
    fn oob_must_be_last() {
        let mut rec = sample();
        rec.oob_frame = Some(1);
        assert!(rec.validate().is_err());
    }
}
