//! Analytic gradients against central finite differences.
//!
//! The analytic side is the f32 backward pass. The numeric side perturbs the
//! same parameters by `h` and re-evaluates the loss with an f64 forward pass,
//! so rounding in the reference stays well below the tolerances checked.

use super::{Net, Weights};
use crate::imgops::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameter index with the worst error.
    pub worst_index: usize,
}

/// Denominator floor for the relative error: gradients smaller than this are
/// compared absolutely.
const REL_FLOOR: f64 = 1e-6;

fn mse<T: Into<f64> + Copy>(y: &[T], t: &[f32]) -> f64 {
    y.iter()
        .zip(t)
        .map(|(&a, &b)| {
            let e = a.into() - b as f64;
            e * e
        })
        .sum::<f64>()
        / y.len() as f64
}

/// Analytic MSE gradient of one sample (f32 backprop).
pub fn analytic_gradient(net: &Net, w: &Weights, input: &[f32], target: &[f32]) -> Vec<f32> {
    let x = net.preprocess(input);
    let trace = net.forward_trace(&w.params, &x);
    let y = trace.acts.last().unwrap();
    let n = y.len() as f32;
    let d_out: Vec<f32> = y.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / n).collect();
    let mut grad = vec![0.0f32; net.n_params()];
    net.backward(&w.params, &trace, &d_out, &mut grad);
    grad
}

/// Checks `samples` seeded parameter indices (all of them when `samples`
/// covers the whole vector) with step `h`.
pub fn grad_check(
    net: &Net,
    w: &Weights,
    input: &[f32],
    target: &[f32],
    h: f64,
    samples: usize,
    seed: u64,
) -> GradCheckReport {
    let analytic = analytic_gradient(net, w, input, target);
    let x64: Vec<f64> = net.preprocess(input).iter().map(|&v| v as f64).collect();
    let mut p64: Vec<f64> = w.params.iter().map(|&v| v as f64).collect();
    let indices: Vec<usize> = if samples >= net.n_params() {
        (0..net.n_params()).collect()
    } else {
        Rng::new(seed).sample_indices(net.n_params(), samples)
    };
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: indices.len(),
        worst_index: 0,
    };
    for &i in &indices {
        let orig = p64[i];
        p64[i] = orig + h;
        let up = mse(&net.forward_from_frozen(&p64, &x64), target);
        p64[i] = orig - h;
        let down = mse(&net.forward_from_frozen(&p64, &x64), target);
        p64[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i] as f64;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, NetSpec};

    fn linear_net() -> Net {
        Net::new(NetSpec {
            input_shape: [1, 1, 6],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 2,
                    activation: Activation::Linear,
                },
            ],
        })
        .unwrap()
    }

    #[test]
    fn linear_single_dense_is_tight() {
        let net = linear_net();
        let w = net.init_weights(3);
        let x = [0.1, -0.4, 0.9, 0.3, 0.0, 0.7];
        let r = grad_check(&net, &w, &x, &[0.5, -0.25], 1e-3, usize::MAX, 0);
        assert_eq!(r.checked, net.n_params());
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_input_bias_gradient_is_output_error() {
        let net = linear_net();
        let mut w = net.init_weights(4);
        let n = w.params.len();
        w.params[n - 2] = 0.3;
        w.params[n - 1] = -0.1;
        let t = [1.0f32, 0.5];
        let g = analytic_gradient(&net, &w, &[0.0; 6], &t);
        // output equals the bias, so dL/db = 2 (b - t) / 2
        assert_eq!(g[n - 2], 0.3 - 1.0);
        assert_eq!(g[n - 1], -0.1 - 0.5);
        assert!(g[..n - 2].iter().all(|&v| v == 0.0));
    }
}
