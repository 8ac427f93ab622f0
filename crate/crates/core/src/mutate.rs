//! Training-time mutation operators producing faulty controllers.
//!
//! - HLR replaces the learning rate.
//! - TAN replaces a fraction of each training image's pixels with uniform
//!   random colors.
//! - TCL replaces the steering label of a fraction of the samples with a
//!   uniform value in `[-1, 1]`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgops::{Rng, CHANNELS};
use crate::nn::{self, LabeledDataset, Net, NnError, TrainConfig, Weights};
use crate::util::write_atomic;

const DATA_STREAM: u64 = 0x4441_5441;
const MODEL_STREAM: u64 = 0x4d4f_444c;

#[derive(Debug, Error)]
pub enum MutateError {
    #[error("{operator} does not apply here: {reason}")]
    Contract { operator: MutationOperator, reason: String },
    #[error("{operator} parameter {param} outside [0, 1)")]
    Param { operator: MutationOperator, param: f64 },
    #[error("mutant pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MutationOperator {
    Hlr,
    Tan,
    Tcl,
}

impl fmt::Display for MutationOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MutationOperator::Hlr => "HLR",
            MutationOperator::Tan => "TAN",
            MutationOperator::Tcl => "TCL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSpec {
    pub operator: MutationOperator,
    pub param: f64,
    pub model_seed: u64,
}

impl MutationSpec {
    /// The six parameterizations used by default: HLR 0.0001/0.01,
    /// TAN 0.15/0.25, TCL 0.15/0.20.
    pub fn defaults(model_seed: u64) -> Vec<MutationSpec> {
        [
            (MutationOperator::Hlr, 0.0001),
            (MutationOperator::Hlr, 0.01),
            (MutationOperator::Tan, 0.15),
            (MutationOperator::Tan, 0.25),
            (MutationOperator::Tcl, 0.15),
            (MutationOperator::Tcl, 0.20),
        ]
        .into_iter()
        .map(|(operator, param)| MutationSpec {
            operator,
            param,
            model_seed,
        })
        .collect()
    }

    /// Stable identifier such as `tcl-0.2`.
    pub fn key(&self) -> String {
        format!("{}-{}", self.operator.to_string().to_lowercase(), self.param)
    }

    pub fn matches(&self, operator: MutationOperator, param: f64) -> bool {
        self.operator == operator && self.param == param
    }
}

/// HLR: same config with the learning rate replaced.
pub fn mutate_config(cfg: &TrainConfig, spec: &MutationSpec) -> Result<TrainConfig, MutateError> {
    if spec.operator != MutationOperator::Hlr {
        return Err(MutateError::Contract {
            operator: spec.operator,
            reason: "only HLR mutates the training config".into(),
        });
    }
    if !(spec.param > 0.0 && spec.param.is_finite()) {
        return Err(MutateError::Param {
            operator: spec.operator,
            param: spec.param,
        });
    }
    Ok(TrainConfig {
        learning_rate: spec.param as f32,
        ..cfg.clone()
    })
}

/// TAN or TCL on a copy of `data`; size and order are preserved.
pub fn mutate_dataset(data: &LabeledDataset, spec: &MutationSpec, rng: &mut Rng) -> Result<LabeledDataset, MutateError> {
    if !(0.0..1.0).contains(&spec.param) {
        return Err(MutateError::Param {
            operator: spec.operator,
            param: spec.param,
        });
    }
    let mut out = data.clone();
    match spec.operator {
        MutationOperator::Hlr => {
            return Err(MutateError::Contract {
                operator: spec.operator,
                reason: "HLR mutates the config, not the data".into(),
            })
        }
        MutationOperator::Tan => {
            for (img, _) in out.samples.iter_mut() {
                let n = img.width() * img.height();
                let k = (spec.param * n as f64).round() as usize;
                let data = img.data_mut();
                for i in rng.sample_indices(n, k) {
                    let bits = rng.next_u64().to_le_bytes();
                    data[i * CHANNELS..(i + 1) * CHANNELS].copy_from_slice(&bits[..CHANNELS]);
                }
            }
        }
        MutationOperator::Tcl => {
            let n = out.samples.len();
            let k = (spec.param * n as f64).round() as usize;
            for i in rng.sample_indices(n, k) {
                out.samples[i].1.steering = rng.uniform(-1.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub spec: MutationSpec,
    pub index: usize,
    pub seed: u64,
    pub weights: PathBuf,
    pub diverged: bool,
    pub final_loss: Option<f64>,
}

impl PoolEntry {
    pub fn model_id(&self) -> String {
        format!("{}-m{}", self.spec.key(), self.index)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolManifest {
    pub entries: Vec<PoolEntry>,
}

impl PoolManifest {
    pub const FILE: &'static str = "pool.json";

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, MutateError> {
        let path = dir.as_ref().join(Self::FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| MutateError::Pool(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| MutateError::Pool(format!("{}: {e}", path.display())))
    }

    pub fn for_spec(&self, operator: MutationOperator, param: f64) -> Vec<&PoolEntry> {
        self.entries.iter().filter(|e| e.spec.matches(operator, param)).collect()
    }
}

fn model_seed(spec: &MutationSpec, index: usize) -> u64 {
    let op = match spec.operator {
        MutationOperator::Hlr => 1u64,
        MutationOperator::Tan => 2,
        MutationOperator::Tcl => 3,
    };
    let mut rng = Rng::derive(spec.model_seed ^ spec.param.to_bits(), (op << 32) | index as u64);
    rng.next_u64()
}

/// Trains one mutant: the mutation is applied with an rng derived from the
/// model seed, which also seeds weight init and shuffling.
pub fn train_mutant(
    net: &Net,
    base_cfg: &TrainConfig,
    data: &LabeledDataset,
    spec: &MutationSpec,
    seed: u64,
) -> Result<(Weights, nn::TrainReport), MutateError> {
    let mut cfg = TrainConfig {
        seed,
        ..base_cfg.clone()
    };
    let trained = match spec.operator {
        MutationOperator::Hlr => {
            cfg = mutate_config(&cfg, spec)?;
            nn::train_controller(net, data, &cfg)
        }
        _ => {
            let mut rng = Rng::derive(seed, DATA_STREAM);
            let mutated = mutate_dataset(data, spec, &mut rng)?;
            nn::train_controller(net, &mutated, &cfg)
        }
    };
    Ok(trained?)
}

/// Trains `models_per_spec` models per spec into `dir`, reusing weight files
/// that already exist unless `force`. Divergent models are recorded with
/// `diverged: true` and no usable weights; the pool carries on.
pub fn build_mutant_pool(
    net: &Net,
    base_cfg: &TrainConfig,
    data: &LabeledDataset,
    specs: &[MutationSpec],
    models_per_spec: usize,
    dir: impl AsRef<Path>,
    force: bool,
) -> Result<PoolManifest, MutateError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let previous = if force { None } else { PoolManifest::load(dir).ok() };
    let jobs: Vec<(MutationSpec, usize)> = specs
        .iter()
        .flat_map(|s| (0..models_per_spec).map(move |i| (*s, i)))
        .collect();
    let entries: Vec<Result<PoolEntry, MutateError>> = jobs
        .par_iter()
        .map(|&(spec, index)| {
            let seed = model_seed(&spec, index) ^ MODEL_STREAM;
            let file = PathBuf::from(format!("{}-m{index}.mrmw", spec.key()));
            let path = dir.join(&file);
            let marker = dir.join(format!("{}-m{index}.diverged", spec.key()));
            let earlier = previous
                .as_ref()
                .and_then(|m| m.entries.iter().find(|e| e.spec == spec && e.index == index && e.seed == seed));
            if !force && path.exists() {
                nn::load_weights(&path, net)?;
                if let Some(e) = earlier {
                    return Ok(e.clone());
                }
                return Ok(PoolEntry {
                    spec,
                    index,
                    seed,
                    weights: file,
                    diverged: false,
                    final_loss: None,
                });
            }
            if !force && marker.exists() {
                return Ok(PoolEntry {
                    spec,
                    index,
                    seed,
                    weights: file,
                    diverged: true,
                    final_loss: None,
                });
            }
            match train_mutant(net, base_cfg, data, &spec, seed) {
                Ok((w, report)) => {
                    nn::save_weights(&path, net, &w, seed, base_cfg.epochs)?;
                    Ok(PoolEntry {
                        spec,
                        index,
                        seed,
                        weights: file,
                        diverged: false,
                        final_loss: report.epoch_losses.last().copied(),
                    })
                }
                Err(MutateError::Nn(NnError::Diverged { epoch, loss })) => {
                    log::warn!("mutant {} m{index} diverged at epoch {epoch} (loss {loss})", spec.key());
                    write_atomic(&marker, format!("epoch {epoch}\n").as_bytes())?;
                    Ok(PoolEntry {
                        spec,
                        index,
                        seed,
                        weights: file,
                        diverged: true,
                        final_loss: None,
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let manifest = PoolManifest {
        entries: entries.into_iter().collect::<Result<_, _>>()?,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(PoolManifest::FILE), &json)?;
    Ok(manifest)
}
