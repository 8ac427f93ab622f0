//! Comparison oracles: a single-hidden-layer autoencoder scored by
//! reconstruction error, and the output spread of a pool of controllers.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::control::{ControlOutput, Controller};
use crate::imgops::{Image, Rng, HEIGHT, WIDTH};
use crate::monitor::Oracle;
use crate::mutate::{MutationSpec, PoolManifest};
use crate::nn::{self, Activation, LayerSpec, LabeledDataset, Model, Net, NetSpec, NnError, TrainConfig, TrainReport, Weights};

pub const SAE_ORACLE: &str = "selforacle/sae";
pub const ENSEMBLE_ORACLE: &str = "ensemble";
pub const SAE_DOWNSCALE: usize = 4;
pub const SAE_HIDDEN: usize = 64;
/// Fraction of the training set each extra ensemble member sees.
pub const ENSEMBLE_SPLIT: f64 = 0.8;

const SPLIT_STREAM: u64 = 0x5350_4c54;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("autoencoder training set is empty")]
    EmptyTrainingSet,
    #[error("ensemble needs at least 2 members, got {0}")]
    PoolTooSmall(usize),
    #[error("ensemble members must share one network spec")]
    MixedSpecs,
    #[error("no mutant pool for {0}; run `train` first")]
    MissingPool(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mutate(#[from] crate::mutate::MutateError),
}

/// Mean squared difference over all components.
pub fn reconstruction_error(x: &[f32], reconstruction: &[f32]) -> f64 {
    assert_eq!(x.len(), reconstruction.len(), "reconstruction shape mismatch");
    let sum: f64 = x
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum();
    sum / x.len() as f64
}

/// Grayscale, block-averaged by [`SAE_DOWNSCALE`], scaled to `[0, 1]`.
pub fn sae_input(img: &Image) -> Vec<f32> {
    let f = SAE_DOWNSCALE;
    let (w, h) = (img.width() / f, img.height() / f);
    let mut out = Vec::with_capacity(w * h);
    for by in 0..h {
        for bx in 0..w {
            let mut acc = 0.0f64;
            for y in by * f..(by + 1) * f {
                for x in bx * f..(bx + 1) * f {
                    let [r, g, b] = img.pixel(x, y);
                    acc += 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                }
            }
            out.push((acc / (f * f) as f64 / 255.0) as f32);
        }
    }
    out
}

/// Dense `n -> hidden (relu) -> n (sigmoid)` on the downscaled frame.
pub fn sae_spec() -> NetSpec {
    let (h, w) = (HEIGHT / SAE_DOWNSCALE, WIDTH / SAE_DOWNSCALE);
    NetSpec {
        input_shape: [h, w, 1],
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: SAE_HIDDEN,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                units: h * w,
                activation: Activation::Sigmoid,
            },
        ],
    }
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    net: Arc<Net>,
    weights: Arc<Weights>,
}

impl Autoencoder {
    pub fn new(net: Arc<Net>, weights: Weights) -> Result<Self, NnError> {
        net.check_weights(&weights)?;
        if net.input_len() != net.output_len() {
            return Err(NnError::Spec("autoencoder output must match its input".into()));
        }
        Ok(Self {
            net,
            weights: Arc::new(weights),
        })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn reconstruct(&self, x: &[f32]) -> Vec<f32> {
        self.net
            .forward::<f32>(&self.weights.params, x)
            .expect("shapes checked at construction")
    }

    /// Reconstruction MSE of the frame's downscaled grayscale form.
    pub fn score(&self, img: &Image) -> f64 {
        let x = sae_input(img);
        reconstruction_error(&x, &self.reconstruct(&x))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let net = Arc::new(Net::new(sae_spec())?);
        let (_, w) = nn::load_weights(path, &net)?;
        Self::new(net, w)
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64, epochs: usize) -> Result<(), NnError> {
        nn::save_weights(path, &self.net, &self.weights, seed, epochs)
    }
}

/// Trains the autoencoder to reproduce its inputs under MSE.
pub fn sae_train(images: &[Image], cfg: &TrainConfig) -> Result<(Autoencoder, TrainReport), BaselineError> {
    if images.is_empty() {
        return Err(BaselineError::EmptyTrainingSet);
    }
    let net = Arc::new(Net::new(sae_spec())?);
    let inputs: Vec<Vec<f32>> = images.iter().map(sae_input).collect();
    let (w, report) = nn::train(&net, &inputs, &inputs, cfg)?;
    Ok((Autoencoder::new(net, w)?, report))
}

impl Oracle for Autoencoder {
    fn ids(&self) -> Vec<String> {
        vec![SAE_ORACLE.to_string()]
    }

    fn score(&self, _frame: usize, img: &Image) -> Vec<f64> {
        vec![Autoencoder::score(self, img)]
    }
}

/// Population standard deviation of the members' steering.
pub fn ensemble_score(outputs: &[ControlOutput]) -> f64 {
    // shifted by the first member so unanimous pools give exactly 0
    let n = outputs.len() as f64;
    let base = outputs[0].steering;
    let mean = outputs.iter().map(|o| o.steering - base).sum::<f64>() / n;
    let var = outputs.iter().map(|o| (o.steering - base - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

#[derive(Debug, Clone)]
pub struct EnsemblePool {
    members: Vec<Model>,
}

impl EnsemblePool {
    pub fn new(members: Vec<Model>) -> Result<Self, BaselineError> {
        if members.len() < 2 {
            return Err(BaselineError::PoolTooSmall(members.len()));
        }
        let hash = members[0].net().spec_hash();
        if members.iter().any(|m| m.net().spec_hash() != hash) {
            return Err(BaselineError::MixedSpecs);
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Model] {
        &self.members
    }

    pub fn score(&self, img: &Image) -> f64 {
        let outs: Vec<ControlOutput> = self.members.iter().map(|m| m.control(img)).collect();
        ensemble_score(&outs)
    }
}

impl Oracle for EnsemblePool {
    fn ids(&self) -> Vec<String> {
        vec![ENSEMBLE_ORACLE.to_string()]
    }

    fn score(&self, _frame: usize, img: &Image) -> Vec<f64> {
        vec![EnsemblePool::score(self, img)]
    }
}

/// Random `ENSEMBLE_SPLIT` subset of the training set for member `index`.
pub fn member_split(data: &LabeledDataset, seed: u64, index: usize) -> LabeledDataset {
    let mut rng = Rng::derive(seed ^ SPLIT_STREAM, index as u64);
    let k = ((data.len() as f64) * ENSEMBLE_SPLIT).round() as usize;
    let mut idx = rng.sample_indices(data.len(), k.max(1));
    idx.sort_unstable();
    LabeledDataset {
        samples: idx.into_iter().map(|i| data.samples[i].clone()).collect(),
    }
}

/// Seed of ensemble member `index` (weight init and shuffling).
pub fn member_seed(seed: u64, index: usize) -> u64 {
    Rng::derive(seed ^ SPLIT_STREAM, 1 << 32 | index as u64).next_u64()
}

/// Trains one extra ensemble member on its own split and seed.
pub fn train_member(net: &Net, cfg: &TrainConfig, data: &LabeledDataset, seed: u64, index: usize) -> Result<Weights, BaselineError> {
    let split = member_split(data, seed, index);
    let cfg = TrainConfig {
        seed: member_seed(seed, index),
        ..cfg.clone()
    };
    Ok(nn::train_controller(net, &split, &cfg)?.0)
}

/// The pool used on a mutant's recordings: the non-diverged models trained
/// under the same mutation.
pub fn ensemble_for_mutant(
    net: &Arc<Net>,
    pool: &PoolManifest,
    pool_dir: &Path,
    spec: &MutationSpec,
) -> Result<EnsemblePool, BaselineError> {
    let entries = pool.for_spec(spec.operator, spec.param);
    if entries.is_empty() {
        return Err(BaselineError::MissingPool(spec.key()));
    }
    let members = entries
        .into_iter()
        .filter(|e| !e.diverged)
        .map(|e| {
            let (_, w) = nn::load_weights(pool_dir.join(&e.weights), net)?;
            Ok(Model::new(net.clone(), w)?)
        })
        .collect::<Result<Vec<_>, BaselineError>>()?;
    EnsemblePool::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlOutput;

    fn out(s: f64) -> ControlOutput {
        ControlOutput {
            steering: s,
            throttle: 0.5,
        }
    }

    #[test]
    fn reconstruction_error_examples() {
        let x = vec![0.2f32, 0.7, 1.0];
        assert_eq!(reconstruction_error(&x, &x), 0.0);
        assert_eq!(reconstruction_error(&[0.0; 12], &[1.0; 12]), 1.0);
        let half: Vec<f32> = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        assert_eq!(reconstruction_error(&half, &[0.0; 10]), 0.5);
        let y = vec![0.1f32, 0.9, 0.4];
        assert_eq!(reconstruction_error(&x, &y), reconstruction_error(&y, &x));
    }

    #[test]
    fn ensemble_score_examples() {
        assert_eq!(ensemble_score(&[out(0.1), out(0.1), out(0.1)]), 0.0);
        assert_eq!(ensemble_score(&[out(-1.0), out(1.0)]), 1.0);
        assert!((ensemble_score(&[out(0.0), out(0.0), out(2.0)]) - (8.0f64 / 9.0).sqrt()).abs() < 1e-12);
        let a = ensemble_score(&[out(0.3), out(-0.2), out(0.9)]);
        let b = ensemble_score(&[out(0.9), out(0.3), out(-0.2)]);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn sae_input_shape_and_range() {
        let img = Image::filled(WIDTH, HEIGHT, [255, 255, 255]);
        let x = sae_input(&img);
        assert_eq!(x.len(), (WIDTH / 4) * (HEIGHT / 4));
        assert!(x.iter().all(|v| (*v - 1.0).abs() < 1e-6));
        let net = Net::new(sae_spec()).unwrap();
        assert_eq!(net.input_len(), net.output_len());
    }

    fn scene(shift: usize) -> Image {
        Image::from_fn(WIDTH, HEIGHT, |x, y| {
            let v = if (x + shift) % 40 < 8 || y > 90 { 230 } else { 60 };
            [v, v, (v / 2) as u8]
        })
    }

    #[test]
    fn sae_learns_a_repeated_image() {
        let img = scene(0);
        let cfg = TrainConfig {
            learning_rate: 20.0,
            epochs: 1000,
            batch_size: 1,
            seed: 3,
        };
        let (ae, _) = sae_train(&vec![img.clone(); 4], &cfg).unwrap();
        assert!(ae.score(&img) < 1e-3, "error {}", ae.score(&img));
        let (again, _) = sae_train(&vec![img.clone(); 4], &cfg).unwrap();
        assert_eq!(ae.weights(), again.weights());
    }

    #[test]
    fn sae_flags_inverted_images() {
        let train: Vec<Image> = (0..8).map(|s| scene(s * 5)).collect();
        let cfg = TrainConfig {
            learning_rate: 20.0,
            epochs: 60,
            batch_size: 1,
            seed: 5,
        };
        let (ae, _) = sae_train(&train, &cfg).unwrap();
        let mean = train.iter().map(|i| ae.score(i)).sum::<f64>() / train.len() as f64;
        let inverted = train[0].map_pixels(|p| p.map(|c| 255 - c));
        assert!(ae.score(&inverted) > mean);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(matches!(
            sae_train(&[], &TrainConfig::default()),
            Err(BaselineError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn pool_needs_two_members() {
        let net = Arc::new(Net::new(NetSpec::default_controller()).unwrap());
        let m = Model::new(net.clone(), net.init_weights(1)).unwrap();
        assert!(EnsemblePool::new(vec![m.clone()]).is_err());
        let pool = EnsemblePool::new(vec![m.clone(), m]).unwrap();
        assert_eq!(pool.score(&scene(0)), 0.0);
    }

    #[test]
    fn member_splits_differ_and_are_seeded() {
        let samples = (0..50).map(|i| (scene(i), out(0.0))).collect();
        let data = LabeledDataset { samples };
        let a = member_split(&data, 7, 0);
        assert_eq!(a.len(), 40);
        let b = member_split(&data, 7, 1);
        let differs = a.samples.iter().zip(&b.samples).any(|(p, q)| p.0 != q.0);
        assert!(differs);
        assert_eq!(member_split(&data, 7, 0).samples.len(), 40);
        assert_ne!(member_seed(7, 0), member_seed(7, 1));
    }
}
