//! Mini-batch SGD on mean-squared error.

use serde::{Deserialize, Serialize};

use super::{image_input, Net, NnError, Weights};
use crate::control::ControlOutput;
use crate::imgops::{Image, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 100,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!("learning rate {} out of range", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(NnError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Image/command pairs for behavioral cloning.
#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub samples: Vec<(Image, ControlOutput)>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<(Image, ControlOutput)>) -> Result<Self, NnError> {
        let ds = Self { samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.samples.is_empty() {
            return Err(NnError::Config("empty dataset".into()));
        }
        if let Some(i) = self.samples.iter().position(|(_, l)| !l.in_range()) {
            return Err(NnError::Config(format!("label {i} out of range")));
        }
        Ok(())
    }
}

/// Trains from pre-processed inputs (outputs of the frozen prefix).
pub fn train(
    net: &Net,
    inputs: &[Vec<f32>],
    targets: &[Vec<f32>],
    cfg: &TrainConfig,
) -> Result<(Weights, TrainReport), NnError> {
    cfg.validate()?;
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(NnError::Config(format!(
            "{} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let in_len = net.frozen_output_len();
    let out_len = net.output_len();
    if let Some(bad) = inputs.iter().find(|x| x.len() != in_len) {
        return Err(NnError::InputSize {
            expected: in_len,
            got: bad.len(),
        });
    }
    if targets.iter().any(|t| t.len() != out_len) {
        return Err(NnError::Config(format!("targets must have {out_len} values")));
    }

    let mut weights = net.init_weights(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = Rng::derive(cfg.seed, 0x5348_5546);
    let mut grad = vec![0.0f32; net.n_params()];
    let mut report = TrainReport::default();
    let lr = cfg.learning_rate;
    let out_scale = 2.0 / out_len as f32;

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let trace = net.forward_trace(&weights.params, &inputs[i]);
                let y = trace.acts.last().unwrap();
                let mut d_out = vec![0.0f32; out_len];
                for k in 0..out_len {
                    let e = y[k] - targets[i][k];
                    loss_sum += (e as f64) * (e as f64) / out_len as f64;
                    d_out[k] = out_scale * e;
                }
                net.backward(&weights.params, &trace, &d_out, &mut grad);
            }
            let step = lr / batch.len() as f32;
            for (p, g) in weights.params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        let loss = loss_sum / inputs.len() as f64;
        report.epoch_losses.push(loss);
        if !loss.is_finite() || !weights.all_finite() {
            return Err(NnError::Diverged { epoch, loss });
        }
        log::debug!("epoch {epoch}: loss {loss:.6}");
    }
    Ok((weights, report))
}

/// Behavioral cloning: images in, `[steering, throttle]` out.
pub fn train_controller(
    net: &Net,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Weights, TrainReport), NnError> {
    data.validate()?;
    if net.output_len() != 2 {
        return Err(NnError::Spec("controller networks must have 2 outputs".into()));
    }
    let inputs: Vec<Vec<f32>> = data
        .samples
        .iter()
        .map(|(img, _)| net.preprocess(&image_input::<f32>(img)))
        .collect();
    let targets: Vec<Vec<f32>> = data
        .samples
        .iter()
        .map(|(_, l)| vec![l.steering as f32, l.throttle as f32])
        .collect();
    train(net, &inputs, &targets, cfg)
}
