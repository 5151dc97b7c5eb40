//! Three-layer convolutional per-pixel classifier with hand-written backprop.
//!
//! Layout: 3×3 conv (3→8) + tanh, 3×3 conv (8→8) + tanh, 1×1 conv (8→K),
//! softmax. Stride 1, zero padding. Inputs are centred by subtracting 0.5.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fileio::{read_float_container, write_float_container};
use crate::image::{ProbMap, RasterImage};
use crate::rng::Rng;

pub const ARCH: &str = "conv3x3-8-tanh_conv3x3-8-tanh_conv1x1-K_softmax";
pub const HIDDEN: usize = 8;
const IN: usize = 3;

/// Offsets into the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(k: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + HIDDEN * IN * 9;
        let w2 = b1 + HIDDEN;
        let b2 = w2 + HIDDEN * HIDDEN * 9;
        let w3 = b2 + HIDDEN;
        let b3 = w3 + k * HIDDEN;
        Self { w1, b1, w2, b2, w3, b3, len: b3 + k }
    }
}

pub fn param_count(k: usize) -> usize {
    Layout::new(k).len
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmenter {
    num_classes: usize,
    params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    width: usize,
    height: usize,
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    /// Planar softmax output, `probs[c * n + i]`.
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn prob_map(&self, k: usize) -> ProbMap {
        let n = self.width * self.height;
        let mut out = vec![0.0; n * k];
        for c in 0..k {
            for i in 0..n {
                out[i * k + c] = self.probs[c * n + i];
            }
        }
        ProbMap::new_unchecked(self.width, self.height, k, out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    arch: String,
    #[serde(rename = "K")]
    k: usize,
    param_count: usize,
    seed: u64,
}

impl Segmenter {
    pub fn zeros(num_classes: usize) -> Self {
        assert!((2..=256).contains(&num_classes), "num_classes {num_classes}");
        Self { num_classes, params: vec![0.0; param_count(num_classes)] }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init(num_classes: usize, rng: &mut Rng) -> Self {
        let mut m = Self::zeros(num_classes);
        let l = m.layout();
        let fill = |p: &mut [f64], fan_in: usize, rng: &mut Rng| {
            let s = (1.0 / fan_in as f64).sqrt();
            for v in p {
                *v = rng.normal() * s;
            }
        };
        fill(&mut m.params[l.w1..l.b1], IN * 9, rng);
        fill(&mut m.params[l.w2..l.b2], HIDDEN * 9, rng);
        fill(&mut m.params[l.w3..l.b3], HIDDEN, rng);
        m
    }

    pub fn from_params(num_classes: usize, params: Vec<f64>) -> Result<Self> {
        if !(2..=256).contains(&num_classes) {
            return Err(Error::InvalidArgument(format!("num_classes {num_classes}")));
        }
        if params.len() != param_count(num_classes) {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters, architecture needs {}",
                params.len(),
                param_count(num_classes)
            )));
        }
        Ok(Self { num_classes, params })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.num_classes)
    }

    pub fn forward(&self, img: &RasterImage) -> ProbMap {
        self.forward_cached(img).prob_map(self.num_classes)
    }

    pub fn forward_cached(&self, img: &RasterImage) -> ForwardCache {
        let (w, h) = img.dims();
        let n = w * h;
        let l = self.layout();
        let p = &self.params;
        let mut input = vec![0.0; IN * n];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..IN {
                input[c * n + i] = px[c] - 0.5;
            }
        }
        let mut a1 = conv3x3(&input, IN, HIDDEN, w, h, &p[l.w1..l.b1], &p[l.b1..l.w2]);
        a1.iter_mut().for_each(|v| *v = v.tanh());
        let mut a2 = conv3x3(&a1, HIDDEN, HIDDEN, w, h, &p[l.w2..l.b2], &p[l.b2..l.w3]);
        a2.iter_mut().for_each(|v| *v = v.tanh());

        let k = self.num_classes;
        let (w3, b3) = (&p[l.w3..l.b3], &p[l.b3..]);
        let mut probs = vec![0.0; k * n];
        for c in 0..k {
            let out = &mut probs[c * n..(c + 1) * n];
            out.fill(b3[c]);
            for j in 0..HIDDEN {
                let wv = w3[c * HIDDEN + j];
                for (o, a) in out.iter_mut().zip(&a2[j * n..(j + 1) * n]) {
                    *o += wv * a;
                }
            }
        }
        softmax_planar(&mut probs, k, n);
        ForwardCache { width: w, height: h, input, a1, a2, probs }
    }

    /// Parameter gradient given `dL/dp` in pixel-major layout (same as [`ProbMap::probs`]).
    pub fn backward(&self, cache: &ForwardCache, grad_probs: &[f64], grad_out: &mut [f64]) {
        let (w, h) = (cache.width, cache.height);
        let n = w * h;
        let k = self.num_classes;
        let l = self.layout();
        let p = &self.params;
        debug_assert_eq!(grad_probs.len(), n * k);
        debug_assert_eq!(grad_out.len(), p.len());

        // softmax Jacobian: dz_c = p_c (g_c - sum_j p_j g_j)
        let mut dz3 = vec![0.0; k * n];
        for i in 0..n {
            let g = &grad_probs[i * k..(i + 1) * k];
            let dot: f64 = (0..k).map(|c| cache.probs[c * n + i] * g[c]).sum();
            for c in 0..k {
                dz3[c * n + i] = cache.probs[c * n + i] * (g[c] - dot);
            }
        }

        let w3 = &p[l.w3..l.b3];
        let mut da2 = vec![0.0; HIDDEN * n];
        for c in 0..k {
            let d = &dz3[c * n..(c + 1) * n];
            grad_out[l.b3 + c] += d.iter().sum::<f64>();
            for j in 0..HIDDEN {
                let a = &cache.a2[j * n..(j + 1) * n];
                grad_out[l.w3 + c * HIDDEN + j] += d.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
                let wv = w3[c * HIDDEN + j];
                for (o, x) in da2[j * n..(j + 1) * n].iter_mut().zip(d) {
                    *o += wv * x;
                }
            }
        }
        for (d, a) in da2.iter_mut().zip(&cache.a2) {
            *d *= 1.0 - a * a;
        }

        let (gw2, rest) = grad_out[l.w2..l.w3].split_at_mut(l.b2 - l.w2);
        let mut da1 = vec![0.0; HIDDEN * n];
        conv3x3_backward(&cache.a1, &da2, HIDDEN, HIDDEN, w, h, &p[l.w2..l.b2], gw2, rest, Some(&mut da1));
        for (d, a) in da1.iter_mut().zip(&cache.a1) {
            *d *= 1.0 - a * a;
        }
        let (gw1, gb1) = grad_out[l.w1..l.w2].split_at_mut(l.b1 - l.w1);
        conv3x3_backward(&cache.input, &da1, IN, HIDDEN, w, h, &p[l.w1..l.b1], gw1, gb1, None);
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, seed: u64) -> Result<()> {
        let header = ModelHeader { arch: ARCH.into(), k: self.num_classes, param_count: self.params.len(), seed };
        write_float_container(path, &header, &self.params)
    }

    /// Returns the model and the seed recorded in its header.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<(Self, u64)> {
        let path = path.as_ref();
        let (header, values): (ModelHeader, Vec<f64>) = read_float_container(path)?;
        if header.arch != ARCH {
            return Err(Error::UnsupportedFormat { path: path.into(), reason: format!("architecture {:?}", header.arch) });
        }
        if header.param_count != values.len() {
            return Err(Error::Malformed {
                path: path.into(),
                reason: format!("header says {} parameters, found {}", header.param_count, values.len()),
            });
        }
        Ok((Self::from_params(header.k, values)?, header.seed))
    }
}

fn softmax_planar(z: &mut [f64], k: usize, n: usize) {
    for i in 0..n {
        let mut m = f64::NEG_INFINITY;
        for c in 0..k {
            m = m.max(z[c * n + i]);
        }
        let mut s = 0.0;
        for c in 0..k {
            let e = (z[c * n + i] - m).exp();
            z[c * n + i] = e;
            s += e;
        }
        for c in 0..k {
            z[c * n + i] /= s;
        }
    }
}

/// Valid x range for a horizontal tap offset `dx` in `{-1, 0, 1}`.
#[inline]
fn span(dx: isize, len: usize) -> (usize, usize) {
    match dx {
        -1 => (1, len),
        1 => (0, len - 1),
        _ => (0, len),
    }
}

/// Zero-padded 3×3 convolution over planar channels. Weights are `[out][in][ky][kx]`.
fn conv3x3(input: &[f64], cin: usize, cout: usize, w: usize, h: usize, weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = w * h;
    let mut out = vec![0.0; cout * n];
    for o in 0..cout {
        let dst = &mut out[o * n..(o + 1) * n];
        dst.fill(bias[o]);
        for i in 0..cin {
            let src = &input[i * n..(i + 1) * n];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let wv = weights[((o * cin + i) * 3 + ky) * 3 + kx];
                    let (x0, x1) = span(dx, w);
                    let (y0, y1) = span(dy, h);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and optionally the input gradient of [`conv3x3`].
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    dout: &[f64],
    cin: usize,
    cout: usize,
    w: usize,
    h: usize,
    weights: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let n = w * h;
    for o in 0..cout {
        let d = &dout[o * n..(o + 1) * n];
        gb[o] += d.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * n..(i + 1) * n];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let wv = weights[widx];
                    let (x0, x1) = span(dx, w);
                    let (y0, y1) = span(dy, h);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let drow = &d[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        acc += drow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(din) = din.as_deref_mut() {
                            let g = &mut din[i * n + sy * w + sx0..i * n + sy * w + sx0 + (x1 - x0)];
                            for (a, b) in g.iter_mut().zip(drow) {
                                *a += wv * b;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}
