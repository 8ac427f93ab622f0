//! Small convolutional/dense network: inference, SGD backprop, serialization.
//!
//! A [`NetSpec`] is compiled into a [`Net`] that knows every layer's shape
//! and where its parameters live inside the flat [`Weights`] vector. Shape
//! errors surface at compile time, never during inference.

mod gradcheck;
mod io;
pub mod layers;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{ControlOutput, Controller};
use crate::imgops::{Image, Rng, CHANNELS, HEIGHT, WIDTH};
use layers::{ConvGeom, Scalar, Shape};

pub use gradcheck::{grad_check, GradCheckReport};
pub use io::{load_weights, save_weights, WeightsHeader};
pub use train::{train, train_controller, LabeledDataset, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("weights have {got} parameters, spec requires {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("input has {got} values, spec requires {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("spec hash mismatch: file {file}, expected {expected}")]
    SpecHash { file: String, expected: String },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
    /// tanh on unit 0 (steering), sigmoid on unit 1 (throttle).
    ControlHead,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Parameter-free block average; only allowed before the first
    /// parameterized layer.
    AvgPool { factor: usize },
    Conv2d {
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        activation: Activation,
    },
    Flatten,
    Dense { units: usize, activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    /// `[height, width, channels]`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// Desk-scale driving controller: an 8x input average-pool, five 3x3
    /// conv layers (8, 12, 16, 16, 16 channels; stride 2 on the first three)
    /// and two dense layers ending in the steering/throttle head.
    pub fn default_controller() -> Self {
        let conv = |out_channels, stride| LayerSpec::Conv2d {
            out_channels,
            kernel: [3, 3],
            stride,
            padding: 1,
            activation: Activation::Relu,
        };
        Self {
            input_shape: [HEIGHT, WIDTH, CHANNELS],
            layers: vec![
                LayerSpec::AvgPool { factor: 8 },
                conv(8, 2),
                conv(12, 2),
                conv(16, 2),
                conv(16, 1),
                conv(16, 1),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 32,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 2,
                    activation: Activation::ControlHead,
                },
            ],
        }
    }

    pub fn count_conv(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Conv2d { .. })).count()
    }

    pub fn count_dense(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone)]
enum Kind {
    AvgPool { factor: usize },
    Conv { geom: ConvGeom, act: Activation },
    Flatten,
    Dense { act: Activation },
}

#[derive(Debug, Clone)]
struct CompiledLayer {
    kind: Kind,
    input: Shape,
    output: Shape,
    w_off: usize,
    w_len: usize,
    b_off: usize,
    b_len: usize,
}

impl CompiledLayer {
    fn has_params(&self) -> bool {
        self.w_len + self.b_len > 0
    }
}

/// Compiled, shape-checked network.
#[derive(Debug, Clone)]
pub struct Net {
    spec: NetSpec,
    hash: String,
    layers: Vec<CompiledLayer>,
    n_params: usize,
    /// Number of leading parameter-free layers.
    frozen_prefix: usize,
}

/// Flat parameter vector; layout is owned by [`Net`].
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub params: Vec<f32>,
}

impl Weights {
    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// Per-layer outputs kept for backprop. `acts[0]` is the network input.
pub struct Trace<F> {
    pub acts: Vec<Vec<F>>,
}

impl Net {
    pub fn new(spec: NetSpec) -> Result<Self, NnError> {
        let [h, w, c] = spec.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(NnError::Spec("input shape has a zero dimension".into()));
        }
        let mut shape = Shape { h, w, c };
        let mut flat = false;
        let mut seen_params = false;
        let mut offset = 0usize;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let input = shape;
            let (kind, output, w_len, b_len) = match *layer {
                LayerSpec::AvgPool { factor } => {
                    if seen_params {
                        return Err(NnError::Spec(format!("layer {i}: avg_pool after a parameterized layer")));
                    }
                    if factor == 0 || flat || !shape.h.is_multiple_of(factor) || !shape.w.is_multiple_of(factor) {
                        return Err(NnError::Spec(format!(
                            "layer {i}: avg_pool factor {factor} does not divide {}x{}",
                            shape.h, shape.w
                        )));
                    }
                    let out = Shape {
                        h: shape.h / factor,
                        w: shape.w / factor,
                        c: shape.c,
                    };
                    (Kind::AvgPool { factor }, out, 0, 0)
                }
                LayerSpec::Conv2d {
                    out_channels,
                    kernel: [kh, kw],
                    stride,
                    padding,
                    activation,
                } => {
                    if flat {
                        return Err(NnError::Spec(format!("layer {i}: conv2d after flatten/dense")));
                    }
                    if out_channels == 0 || kh == 0 || kw == 0 || stride == 0 {
                        return Err(NnError::Spec(format!("layer {i}: conv2d has a zero hyperparameter")));
                    }
                    let span_h = shape.h + 2 * padding;
                    let span_w = shape.w + 2 * padding;
                    if span_h < kh || span_w < kw {
                        return Err(NnError::Spec(format!(
                            "layer {i}: kernel {kh}x{kw} larger than padded input {span_h}x{span_w}"
                        )));
                    }
                    let out = Shape {
                        h: (span_h - kh) / stride + 1,
                        w: (span_w - kw) / stride + 1,
                        c: out_channels,
                    };
                    let geom = ConvGeom {
                        input: shape,
                        output: out,
                        kh,
                        kw,
                        stride,
                        pad: padding,
                    };
                    (Kind::Conv { geom, act: activation }, out, kh * kw * shape.c * out_channels, out_channels)
                }
                LayerSpec::Flatten => {
                    flat = true;
                    let out = Shape {
                        h: 1,
                        w: 1,
                        c: shape.len(),
                    };
                    (Kind::Flatten, out, 0, 0)
                }
                LayerSpec::Dense { units, activation } => {
                    if !flat && (shape.h != 1 || shape.w != 1) {
                        return Err(NnError::Spec(format!("layer {i}: dense on a spatial tensor; add flatten")));
                    }
                    if units == 0 {
                        return Err(NnError::Spec(format!("layer {i}: dense with zero units")));
                    }
                    if activation == Activation::ControlHead && units != 2 {
                        return Err(NnError::Spec(format!("layer {i}: control head needs exactly 2 units")));
                    }
                    flat = true;
                    let out = Shape { h: 1, w: 1, c: units };
                    (Kind::Dense { act: activation }, out, shape.len() * units, units)
                }
            };
            if w_len + b_len > 0 {
                seen_params = true;
            }
            layers.push(CompiledLayer {
                kind,
                input,
                output,
                w_off: offset,
                w_len,
                b_off: offset + w_len,
                b_len,
            });
            offset += w_len + b_len;
            shape = output;
        }
        if layers.is_empty() {
            return Err(NnError::Spec("no layers".into()));
        }
        let frozen_prefix = layers.iter().take_while(|l| !l.has_params()).count();
        let hash = spec.hash();
        Ok(Self {
            spec,
            hash,
            layers,
            n_params: offset,
            frozen_prefix,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn spec_hash(&self) -> &str {
        &self.hash
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input.len()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().output.len()
    }

    /// Output length of the leading parameter-free layers.
    pub fn frozen_output_len(&self) -> usize {
        match self.frozen_prefix {
            0 => self.input_len(),
            k => self.layers[k - 1].output.len(),
        }
    }

    pub fn zero_weights(&self) -> Weights {
        Weights {
            params: vec![0.0; self.n_params],
        }
    }

    /// He-style uniform init (`U[-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn init_weights(&self, seed: u64) -> Weights {
        let mut rng = Rng::new(seed);
        let mut params = vec![0.0f32; self.n_params];
        for layer in &self.layers {
            if layer.w_len == 0 {
                continue;
            }
            let fan_in = layer.w_len / layer.b_len;
            let limit = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[layer.w_off..layer.w_off + layer.w_len] {
                *p = rng.uniform(-limit, limit) as f32;
            }
        }
        Weights { params }
    }

    pub fn check_weights(&self, w: &Weights) -> Result<(), NnError> {
        if w.params.len() != self.n_params {
            return Err(NnError::ParamCount {
                expected: self.n_params,
                got: w.params.len(),
            });
        }
        Ok(())
    }

    /// Runs only the leading parameter-free layers.
    pub fn preprocess<F: Scalar>(&self, input: &[F]) -> Vec<F> {
        let mut x = input.to_vec();
        for layer in &self.layers[..self.frozen_prefix] {
            x = self.apply_layer(layer, &x, &[]);
        }
        x
    }

    fn apply_layer<F: Scalar>(&self, layer: &CompiledLayer, x: &[F], params: &[F]) -> Vec<F> {
        let w = params.get(layer.w_off..layer.w_off + layer.w_len).unwrap_or(&[]);
        let b = params.get(layer.b_off..layer.b_off + layer.b_len).unwrap_or(&[]);
        match &layer.kind {
            Kind::AvgPool { factor } => layers::avg_pool_forward(x, layer.input, *factor),
            Kind::Conv { geom, act } => layers::conv_forward(x, w, b, geom, *act),
            Kind::Flatten => x.to_vec(),
            Kind::Dense { act } => layers::dense_forward(x, w, b, *act),
        }
    }

    /// Forward pass from the output of the frozen prefix.
    pub fn forward_from_frozen<F: Scalar>(&self, params: &[F], x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.frozen_output_len());
        let mut cur = x.to_vec();
        for layer in &self.layers[self.frozen_prefix..] {
            cur = self.apply_layer(layer, &cur, params);
        }
        cur
    }

    pub fn forward<F: Scalar>(&self, params: &[F], input: &[F]) -> Result<Vec<F>, NnError> {
        if input.len() != self.input_len() {
            return Err(NnError::InputSize {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        if params.len() != self.n_params {
            return Err(NnError::ParamCount {
                expected: self.n_params,
                got: params.len(),
            });
        }
        Ok(self.forward_from_frozen(params, &self.preprocess(input)))
    }

    /// Forward from the frozen-prefix output, keeping every activation.
    pub fn forward_trace<F: Scalar>(&self, params: &[F], x: &[F]) -> Trace<F> {
        let mut acts = Vec::with_capacity(self.layers.len() - self.frozen_prefix + 1);
        acts.push(x.to_vec());
        for layer in &self.layers[self.frozen_prefix..] {
            let next = self.apply_layer(layer, acts.last().unwrap(), params);
            acts.push(next);
        }
        Trace { acts }
    }

    /// Backprop `d_out` (gradient w.r.t. the network output) through a
    /// trace, accumulating into `grad`.
    pub fn backward<F: Scalar>(&self, params: &[F], trace: &Trace<F>, d_out: &[F], grad: &mut [F]) {
        let trainable = &self.layers[self.frozen_prefix..];
        let mut delta = d_out.to_vec();
        for (li, layer) in trainable.iter().enumerate().rev() {
            let x = &trace.acts[li];
            let a = &trace.acts[li + 1];
            let want_dx = li > 0;
            let (wgrad, bgrad) = {
                let (head, tail) = grad.split_at_mut(layer.b_off);
                (&mut head[layer.w_off..], &mut tail[..layer.b_len])
            };
            let w = &params[layer.w_off..layer.w_off + layer.w_len];
            match &layer.kind {
                Kind::Conv { geom, act } => {
                    for (k, d) in delta.iter_mut().enumerate() {
                        *d = *d * layers::activation_grad(*act, k % geom.output.c, a[k]);
                    }
                    match layers::conv_backward(x, w, &delta, geom, wgrad, bgrad, want_dx) {
                        Some(dx) => delta = dx,
                        None => break,
                    }
                }
                Kind::Dense { act } => {
                    for (k, d) in delta.iter_mut().enumerate() {
                        *d = *d * layers::activation_grad(*act, k, a[k]);
                    }
                    match layers::dense_backward(x, w, &delta, wgrad, bgrad, want_dx) {
                        Some(dx) => delta = dx,
                        None => break,
                    }
                }
                Kind::Flatten => {}
                Kind::AvgPool { .. } => unreachable!("avg_pool is always in the frozen prefix"),
            }
        }
    }
}

/// Image bytes scaled to `[0, 1]`.
pub fn image_input<F: Scalar>(img: &Image) -> Vec<F> {
    let scale = F::one() / F::from(255.0).unwrap();
    img.data().iter().map(|&v| F::from(v).unwrap() * scale).collect()
}

/// A trained network bound to its weights, used as a driving controller.
#[derive(Debug, Clone)]
pub struct Model {
    net: Arc<Net>,
    weights: Arc<Weights>,
}

impl Model {
    pub fn new(net: Arc<Net>, weights: Weights) -> Result<Self, NnError> {
        net.check_weights(&weights)?;
        if net.output_len() != 2 {
            return Err(NnError::Spec("controller networks must have 2 outputs".into()));
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

    pub fn predict(&self, img: &Image) -> ControlOutput {
        let out = self
            .net
            .forward::<f32>(&self.weights.params, &image_input(img))
            .expect("shapes checked at construction");
        ControlOutput::clamped(out[0] as f64, out[1] as f64)
    }
}

impl Controller for Model {
    fn control(&self, img: &Image) -> ControlOutput {
        self.predict(img)
    }
}
