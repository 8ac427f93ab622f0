//! Layer kernels over HWC-interleaved tensors.
//!
//! Conv kernels are stored `[ky][kx][in][out]` and dense matrices `[in][out]`
//! so the innermost loops run over output channels.

use std::ops::AddAssign;

use num_traits::Float;

use super::Activation;

pub trait Scalar: Float + AddAssign + Send + Sync + std::fmt::Debug + 'static {}
impl<T: Float + AddAssign + Send + Sync + std::fmt::Debug + 'static> Scalar for T {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub input: Shape,
    pub output: Shape,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

#[inline]
pub fn activate<F: Scalar>(act: Activation, index: usize, z: F) -> F {
    match act {
        Activation::Relu => z.max(F::zero()),
        Activation::Tanh => z.tanh(),
        Activation::Sigmoid => sigmoid(z),
        Activation::Linear => z,
        Activation::ControlHead => match index {
            0 => z.tanh(),
            1 => sigmoid(z),
            _ => z,
        },
    }
}

#[inline]
fn sigmoid<F: Scalar>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

/// Derivative expressed through the activation output.
#[inline]
pub fn activation_grad<F: Scalar>(act: Activation, index: usize, a: F) -> F {
    let one = F::one();
    match act {
        Activation::Relu => {
            if a > F::zero() {
                one
            } else {
                F::zero()
            }
        }
        Activation::Tanh => one - a * a,
        Activation::Sigmoid => a * (one - a),
        Activation::Linear => one,
        Activation::ControlHead => match index {
            0 => one - a * a,
            1 => a * (one - a),
            _ => one,
        },
    }
}

pub fn avg_pool_forward<F: Scalar>(x: &[F], input: Shape, factor: usize) -> Vec<F> {
    let (oh, ow) = (input.h / factor, input.w / factor);
    let c = input.c;
    let mut out = vec![F::zero(); oh * ow * c];
    let scale = F::one() / F::from(factor * factor).unwrap();
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * c..][..c];
            for dy in 0..factor {
                let row = (oy * factor + dy) * input.w;
                for dx in 0..factor {
                    let i = &x[(row + ox * factor + dx) * c..][..c];
                    for ch in 0..c {
                        o[ch] += i[ch];
                    }
                }
            }
            for v in o.iter_mut() {
                *v = *v * scale;
            }
        }
    }
    out
}

pub fn conv_forward<F: Scalar>(x: &[F], w: &[F], b: &[F], g: &ConvGeom, act: Activation) -> Vec<F> {
    let (ci, co) = (g.input.c, g.output.c);
    let mut out = vec![F::zero(); g.output.len()];
    for oy in 0..g.output.h {
        for ox in 0..g.output.w {
            let o = &mut out[(oy * g.output.w + ox) * co..][..co];
            o.copy_from_slice(b);
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.input.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.input.w as isize {
                        continue;
                    }
                    let xi = &x[(iy as usize * g.input.w + ix as usize) * ci..][..ci];
                    let wk = &w[(ky * g.kw + kx) * ci * co..][..ci * co];
                    for (ic, &xv) in xi.iter().enumerate() {
                        let wrow = &wk[ic * co..][..co];
                        for (ov, &wv) in o.iter_mut().zip(wrow) {
                            *ov += xv * wv;
                        }
                    }
                }
            }
            for (k, v) in o.iter_mut().enumerate() {
                *v = activate(act, k, *v);
            }
        }
    }
    out
}

/// Accumulates parameter gradients; returns the input gradient when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    dz: &[F],
    g: &ConvGeom,
    dw: &mut [F],
    db: &mut [F],
    want_dx: bool,
) -> Option<Vec<F>> {
    let (ci, co) = (g.input.c, g.output.c);
    let mut dx = if want_dx { vec![F::zero(); g.input.len()] } else { Vec::new() };
    for oy in 0..g.output.h {
        for ox in 0..g.output.w {
            let d = &dz[(oy * g.output.w + ox) * co..][..co];
            for (acc, &dv) in db.iter_mut().zip(d) {
                *acc += dv;
            }
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.input.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.input.w as isize {
                        continue;
                    }
                    let xoff = (iy as usize * g.input.w + ix as usize) * ci;
                    let woff = (ky * g.kw + kx) * ci * co;
                    for ic in 0..ci {
                        let xv = x[xoff + ic];
                        let wrow = &w[woff + ic * co..][..co];
                        let dwrow = &mut dw[woff + ic * co..][..co];
                        let mut gi = F::zero();
                        for k in 0..co {
                            dwrow[k] += d[k] * xv;
                            gi += wrow[k] * d[k];
                        }
                        if want_dx {
                            dx[xoff + ic] += gi;
                        }
                    }
                }
            }
        }
    }
    want_dx.then_some(dx)
}

pub fn dense_forward<F: Scalar>(x: &[F], w: &[F], b: &[F], act: Activation) -> Vec<F> {
    let units = b.len();
    let mut out = b.to_vec();
    for (i, &xv) in x.iter().enumerate() {
        if xv == F::zero() {
            continue;
        }
        let wrow = &w[i * units..][..units];
        for (o, &wv) in out.iter_mut().zip(wrow) {
            *o += xv * wv;
        }
    }
    for (k, v) in out.iter_mut().enumerate() {
        *v = activate(act, k, *v);
    }
    out
}

pub fn dense_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    dz: &[F],
    dw: &mut [F],
    db: &mut [F],
    want_dx: bool,
) -> Option<Vec<F>> {
    let units = dz.len();
    for (acc, &d) in db.iter_mut().zip(dz) {
        *acc += d;
    }
    let mut dx = if want_dx { vec![F::zero(); x.len()] } else { Vec::new() };
    for (i, &xv) in x.iter().enumerate() {
        let wrow = &w[i * units..][..units];
        let dwrow = &mut dw[i * units..][..units];
        let mut gi = F::zero();
        for k in 0..units {
            dwrow[k] += dz[k] * xv;
            gi += wrow[k] * dz[k];
        }
        if want_dx {
            dx[i] = gi;
        }
    }
    want_dx.then_some(dx)
}
