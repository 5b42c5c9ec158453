//! Naive f64 reference implementations and finite-difference helpers.
//!
//! Nothing here calls into the crate's kernels: every function is a direct
//! loop over the textbook definition, so agreement with the crate is an
//! independent check rather than a restatement.
#![allow(dead_code)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn to32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Values in `[-1, 1]` with magnitude at least `gap`, so kinks at zero stay
/// out of reach of the finite-difference step.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Distinct values spaced `step` apart in shuffled order, so every pooling
/// window has a unique maximum by a wide margin.
pub fn distinct(rng: &mut ChaCha8Rng, n: usize, step: f64) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * step).collect();
    v.shuffle(rng);
    v
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - n|| / max(||a||, ||n||)`, zero when both vanish.
pub fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &n) in analytic.iter().zip(numeric) {
        let a = a as f64;
        diff += (a - n).powi(2);
        na += a * a;
        nn += n * n;
    }
    let scale = na.max(nn).sqrt();
    if scale < 1e-12 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output extent and leading pad; `same` keeps `ceil(n / s)` outputs and
/// puts the odd padding pixel after the data.
pub fn geometry(n: usize, k: usize, s: usize, same: bool) -> (usize, usize) {
    if same {
        let out = n.div_ceil(s);
        let total = ((out - 1) * s + k).saturating_sub(n);
        (out, total / 2)
    } else {
        ((n - k) / s + 1, 0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn at(&self, b: usize, y: usize, x: usize, ch: usize) -> usize {
        ((b * self.h + y) * self.w + x) * self.c + ch
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }
}

/// NHWC convolution, kernel `[k, k, cin, f]`, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    d: Dims,
    kernel: &[f64],
    bias: &[f64],
    k: usize,
    f: usize,
    stride: usize,
    same: bool,
) -> (Vec<f64>, Dims) {
    let (oh, py) = geometry(d.h, k, stride, same);
    let (ow, px) = geometry(d.w, k, stride, same);
    let od = Dims { n: d.n, h: oh, w: ow, c: f };
    let mut out = vec![0.0; od.len()];
    for b in 0..d.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..f {
                    let mut acc = bias[o];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - py as isize;
                            let ix = (ox * stride + kx) as isize - px as isize;
                            if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                continue;
                            }
                            for ci in 0..d.c {
                                let wv = kernel[((ky * k + kx) * d.c + ci) * f + o];
                                acc += wv * x[d.at(b, iy as usize, ix as usize, ci)];
                            }
                        }
                    }
                    out[od.at(b, oy, ox, o)] = acc;
                }
            }
        }
    }
    (out, od)
}

/// Max pooling that ignores padded positions.
pub fn maxpool(x: &[f64], d: Dims, k: usize, stride: usize, same: bool) -> (Vec<f64>, Dims) {
    let (oh, py) = geometry(d.h, k, stride, same);
    let (ow, px) = geometry(d.w, k, stride, same);
    let od = Dims { n: d.n, h: oh, w: ow, c: d.c };
    let mut out = vec![f64::NEG_INFINITY; od.len()];
    for b in 0..d.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..d.c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - py as isize;
                            let ix = (ox * stride + kx) as isize - px as isize;
                            if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                continue;
                            }
                            let v = x[d.at(b, iy as usize, ix as usize, ch)];
                            let slot = &mut out[od.at(b, oy, ox, ch)];
                            *slot = slot.max(v);
                        }
                    }
                }
            }
        }
    }
    (out, od)
}

/// Per-example channel means over all spatial positions.
pub fn global_avg_pool(x: &[f64], d: Dims) -> Vec<f64> {
    let mut out = vec![0.0; d.n * d.c];
    for b in 0..d.n {
        for y in 0..d.h {
            for xx in 0..d.w {
                for ch in 0..d.c {
                    out[b * d.c + ch] += x[d.at(b, y, xx, ch)];
                }
            }
        }
    }
    let area = (d.h * d.w) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    out
}

/// `[n, din] x [din, dout] + bias`.
pub fn dense(x: &[f64], n: usize, din: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let dout = bias.len();
    let mut out = vec![0.0; n * dout];
    for b in 0..n {
        for o in 0..dout {
            let mut acc = bias[o];
            for i in 0..din {
                acc += x[b * din + i] * w[i * dout + o];
            }
            out[b * dout + o] = acc;
        }
    }
    out
}

/// Training-mode batch norm over the last axis with biased batch variance.
pub fn batchnorm_train(x: &[f64], channels: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let rows = x.len() / channels;
    let mut out = vec![0.0; x.len()];
    for ch in 0..channels {
        let vals: Vec<f64> = (0..rows).map(|r| x[r * channels + ch]).collect();
        let mean = vals.iter().sum::<f64>() / rows as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
        for r in 0..rows {
            out[r * channels + ch] = gamma[ch] * (vals[r] - mean) / (var + eps).sqrt() + beta[ch];
        }
    }
    out
}

/// Inference-mode batch norm with fixed statistics.
pub fn batchnorm_infer(
    x: &[f64],
    channels: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i % channels;
            gamma[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch]
        })
        .collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn softmax(x: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        out.extend(row.iter().map(|v| (v - m).exp() / z));
    }
    out
}

pub fn mse(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64
}

pub fn cross_entropy(logits: &[f64], y: &[f64]) -> f64 {
    let p = softmax(logits, logits.len());
    -p.iter().zip(y).map(|(pi, yi)| yi * pi.ln()).sum::<f64>()
}

pub fn multilabel(logits: &[f64], y: &[f64]) -> f64 {
    logits
        .iter()
        .zip(y)
        .map(|(&t, &yi)| {
            let s = 1.0 / (1.0 + (-t).exp());
            -(yi * s.ln() + (1.0 - yi) * (1.0 - s).ln())
        })
        .sum()
}

pub fn hinge(p: &[f64], y: &[f64]) -> f64 {
    p.iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let t = if yi > 0.5 { 1.0 } else { -1.0 };
            (1.0 - t * pi).max(0.0)
        })
        .sum::<f64>()
        / p.len() as f64
}

pub fn cosine(p: &[f64], y: &[f64]) -> f64 {
    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    1.0 - dot(p, y) / norm
}

pub fn one_hot(label: usize, k: usize) -> Vec<f64> {
    (0..k).map(|i| if i == label { 1.0 } else { 0.0 }).collect()
}

/// Five-class one-versus-one scores by direct enumeration of the pairs
/// `a < b` in nested-loop order, and the lowest-index maximum.
pub fn ovo_oracle(probs: &[[f32; 2]]) -> (Vec<f64>, usize) {
    let mut scores = vec![0.0f64; 5];
    let mut i = 0;
    for a in 0..5 {
        for b in a + 1..5 {
            scores[a] += probs[i][0] as f64;
            scores[b] += probs[i][1] as f64;
            i += 1;
        }
    }
    let mut best = 0;
    for c in 1..5 {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    (scores, best)
}

/// Expected cascade label when bit `s - 1` of `pattern` says stage `s` fires:
/// the most severe firing stage, or 0.
pub fn cascade_oracle(pattern: u32) -> usize {
    (1..=4).rev().find(|s| pattern & (1 << (s - 1)) != 0).unwrap_or(0)
}

/// Cascade probability pairs realising a firing pattern.
pub fn cascade_probs(pattern: u32) -> Vec<[f32; 2]> {
    (0..4)
        .map(|i| if pattern & (1 << i) != 0 { [0.2, 0.8] } else { [0.8, 0.2] })
        .collect()
}

/// Count of unordered pairs by explicit enumeration.
pub fn count_pairs(l: usize) -> usize {
    let mut n = 0;
    for a in 0..l {
        for b in 0..l {
            if a < b {
                n += 1;
            }
        }
    }
    n
}
