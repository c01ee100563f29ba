//! A small fully-convolutional per-pixel predictor.
//!
//! ```text
//! image (H x W x Cin)
//!   -> conv3x3(Cin -> hidden) + ReLU
//!   -> conv3x3(hidden -> embed) + ReLU      = embedding map F_s
//!   -> conv1x1(embed -> classes)            = logits
//!   -> softmax                              = class probabilities F_c
//! ```
//!
//! Convolutions are stride 1 with zero padding 1. Weights are stored
//! `[kh, kw, in, out]` so the innermost loop runs over output channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub in_channels: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl ModelShape {
    pub fn new(in_channels: usize, embed_dim: usize, num_classes: usize) -> Self {
        Self {
            in_channels,
            hidden: 16,
            embed_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Argument(format!("degenerate model shape {self:?}")));
        }
        if self.num_classes < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Learnable parameters, flattened per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub shape: ModelShape,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Names and dims of each parameter tensor, in a fixed order.
pub const PARAM_NAMES: [&str; 6] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "head.weight",
    "head.bias",
];

impl ToyModel {
    /// He-normal weights, zero biases.
    pub fn init(shape: ModelShape, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let mut he = |n: usize, fan_in: usize| -> Vec<f64> {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.normal() * std).collect()
        };
        let ModelShape {
            in_channels: ci,
            hidden: h,
            embed_dim: e,
            num_classes: k,
        } = shape;
        Ok(Self {
            shape,
            conv1_w: he(9 * ci * h, 9 * ci),
            conv1_b: vec![0.0; h],
            conv2_w: he(9 * h * e, 9 * h),
            conv2_b: vec![0.0; e],
            head_w: he(e * k, e),
            head_b: vec![0.0; k],
        })
    }

    pub fn zeros(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        let ModelShape {
            in_channels: ci,
            hidden: h,
            embed_dim: e,
            num_classes: k,
        } = shape;
        Ok(Self {
            shape,
            conv1_w: vec![0.0; 9 * ci * h],
            conv1_b: vec![0.0; h],
            conv2_w: vec![0.0; 9 * h * e],
            conv2_b: vec![0.0; e],
            head_w: vec![0.0; e * k],
            head_b: vec![0.0; k],
        })
    }

    pub fn param_dims(&self) -> [Vec<usize>; 6] {
        let ModelShape {
            in_channels: ci,
            hidden: h,
            embed_dim: e,
            num_classes: k,
        } = self.shape;
        [
            vec![3, 3, ci, h],
            vec![h],
            vec![3, 3, h, e],
            vec![e],
            vec![e, k],
            vec![k],
        ]
    }

    pub fn params(&self) -> [&Vec<f64>; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.head_w,
            &self.head_b,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn forward(&self, image: &[f64], height: usize, width: usize) -> Result<Forward> {
        let s = self.shape;
        if image.len() != height * width * s.in_channels {
            return Err(Error::Argument(format!(
                "image buffer has {} entries, expected {height}x{width}x{}",
                image.len(),
                s.in_channels
            )));
        }
        let npix = height * width;
        let mut z1 = vec![0.0; npix * s.hidden];
        conv3x3_forward(image, height, width, s.in_channels, &self.conv1_w, &self.conv1_b, s.hidden, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
        let mut z2 = vec![0.0; npix * s.embed_dim];
        conv3x3_forward(&a1, height, width, s.hidden, &self.conv2_w, &self.conv2_b, s.embed_dim, &mut z2);
        let embed: Vec<f64> = z2.iter().map(|&v| v.max(0.0)).collect();

        let k = s.num_classes;
        let mut logits = vec![0.0; npix * k];
        for p in 0..npix {
            let x = &embed[p * s.embed_dim..(p + 1) * s.embed_dim];
            let out = &mut logits[p * k..(p + 1) * k];
            out.copy_from_slice(&self.head_b);
            for (e, &xv) in x.iter().enumerate() {
                let wrow = &self.head_w[e * k..(e + 1) * k];
                for (o, &wv) in out.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let mut probs = vec![0.0; npix * k];
        for p in 0..npix {
            softmax(&logits[p * k..(p + 1) * k], &mut probs[p * k..(p + 1) * k]);
        }
        Ok(Forward {
            height,
            width,
            z1,
            a1,
            z2,
            embed,
            logits,
            probs,
        })
    }

    /// Backpropagate gradients w.r.t. the probabilities, the logits and the
    /// embedding map into parameter gradients.
    pub fn backward(
        &self,
        image: &[f64],
        fwd: &Forward,
        grad_probs: &[f64],
        grad_logits: &[f64],
        grad_embed: &[f64],
    ) -> Grads {
        let s = self.shape;
        let (h, w) = (fwd.height, fwd.width);
        let npix = h * w;
        let k = s.num_classes;
        let e = s.embed_dim;

        let mut dlogits = grad_logits.to_vec();
        for p in 0..npix {
            let pr = &fwd.probs[p * k..(p + 1) * k];
            let g = &grad_probs[p * k..(p + 1) * k];
            let dot: f64 = pr.iter().zip(g).map(|(a, b)| a * b).sum();
            for c in 0..k {
                dlogits[p * k + c] += pr[c] * (g[c] - dot);
            }
        }

        let mut grads = Grads::zeros_like(self);
        let mut dz2 = grad_embed.to_vec();
        for p in 0..npix {
            let dz = &dlogits[p * k..(p + 1) * k];
            let x = &fwd.embed[p * e..(p + 1) * e];
            for (c, &d) in dz.iter().enumerate() {
                grads.head_b[c] += d;
            }
            for ei in 0..e {
                let wrow = &self.head_w[ei * k..(ei + 1) * k];
                let grow = &mut grads.head_w[ei * k..(ei + 1) * k];
                let mut acc = 0.0;
                for c in 0..k {
                    grow[c] += x[ei] * dz[c];
                    acc += wrow[c] * dz[c];
                }
                dz2[p * e + ei] += acc;
            }
        }
        for (d, &z) in dz2.iter_mut().zip(&fwd.z2) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }

        let mut da1 = vec![0.0; npix * s.hidden];
        conv3x3_backward(
            &fwd.a1,
            h,
            w,
            s.hidden,
            &self.conv2_w,
            e,
            &dz2,
            &mut grads.conv2_w,
            &mut grads.conv2_b,
            Some(&mut da1),
        );
        for (d, &z) in da1.iter_mut().zip(&fwd.z1) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        conv3x3_backward(
            image,
            h,
            w,
            s.in_channels,
            &self.conv1_w,
            s.hidden,
            &da1,
            &mut grads.conv1_w,
            &mut grads.conv1_b,
            None,
        );
        grads
    }
}

/// Cached activations from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub height: usize,
    pub width: usize,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    /// Post-ReLU embedding map `H x W x embed_dim`.
    pub embed: Vec<f64>,
    pub logits: Vec<f64>,
    /// Softmax probabilities `H x W x classes`.
    pub probs: Vec<f64>,
}

impl Forward {
    /// Which pre-activations are positive; changes mark ReLU kinks.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.z1.iter().chain(&self.z2).map(|&z| z > 0.0).collect()
    }
}

/// Parameter gradients, same layout as [`ToyModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Grads {
    pub fn zeros_like(m: &ToyModel) -> Self {
        Self {
            conv1_w: vec![0.0; m.conv1_w.len()],
            conv1_b: vec![0.0; m.conv1_b.len()],
            conv2_w: vec![0.0; m.conv2_w.len()],
            conv2_b: vec![0.0; m.conv2_b.len()],
            head_w: vec![0.0; m.head_w.len()],
            head_b: vec![0.0; m.head_b.len()],
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.head_w,
            &self.head_b,
        ]
    }
}

pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_forward(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    out: &mut [f64],
) {
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
            o.copy_from_slice(bias);
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let base = (iy as usize * w + ix as usize) * cin;
                    let inp = &input[base..base + cin];
                    let wk = &weight[(ky * 3 + kx) * cin * cout..(ky * 3 + kx + 1) * cin * cout];
                    for (ci, &v) in inp.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let wrow = &wk[ci * cout..(ci + 1) * cout];
                        for (ov, &wv) in o.iter_mut().zip(wrow) {
                            *ov += v * wv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    weight: &[f64],
    cout: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    for y in 0..h {
        for x in 0..w {
            let g = &dout[(y * w + x) * cout..(y * w + x + 1) * cout];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (b, &gv) in dbias.iter_mut().zip(g) {
                *b += gv;
            }
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let base = (iy as usize * w + ix as usize) * cin;
                    let koff = (ky * 3 + kx) * cin * cout;
                    for ci in 0..cin {
                        let v = input[base + ci];
                        let row = koff + ci * cout;
                        let dw = &mut dweight[row..row + cout];
                        for (d, &gv) in dw.iter_mut().zip(g) {
                            *d += v * gv;
                        }
                        if let Some(di) = dinput.as_deref_mut() {
                            let wrow = &weight[row..row + cout];
                            let mut acc = 0.0;
                            for (&wv, &gv) in wrow.iter().zip(g) {
                                acc += wv * gv;
                            }
                            di[base + ci] += acc;
                        }
                    }
                }
            }
        }
    }
}
