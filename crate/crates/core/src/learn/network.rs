//! A small convolutional classifier with hand-written backpropagation.
//!
//! Layout: conv3x3(1 -> c1) + ReLU + maxpool2, conv3x3(c1 -> c2) + ReLU +
//! maxpool2, dense(flat -> hidden) + ReLU, dense(hidden -> K) + softmax.
//! All parameters live in one flat vector so optimizers, gradient checks and
//! checkpoints can treat them uniformly.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub in_h: usize,
    pub in_w: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub fc1_w: Range<usize>,
    pub fc1_b: Range<usize>,
    pub fc2_w: Range<usize>,
    pub fc2_b: Range<usize>,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_h == 0 || self.in_w == 0 || self.in_h % 4 != 0 || self.in_w % 4 != 0 {
            return Err(Error::invalid(format!(
                "input {}x{} must be non-empty and divisible by 4",
                self.in_h, self.in_w
            )));
        }
        if self.conv1 == 0 || self.conv2 == 0 || self.hidden == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w
    }

    pub fn flat_len(&self) -> usize {
        self.conv2 * (self.in_h / 4) * (self.in_w / 4)
    }

    pub fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Layout {
            conv1_w: take(self.conv1 * 9),
            conv1_b: take(self.conv1),
            conv2_w: take(self.conv2 * self.conv1 * 9),
            conv2_b: take(self.conv2),
            fc1_w: take(self.hidden * self.flat_len()),
            fc1_b: take(self.hidden),
            fc2_w: take(self.classes * self.hidden),
            fc2_b: take(self.classes),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().fc2_b.end
    }
}

/// Zero-padded 3x3 convolution, stride 1. `out` is overwritten.
#[allow(clippy::too_many_arguments)]
fn conv3x3_forward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    out_c: usize,
    out: &mut [f64],
) {
    let plane = h * w;
    for oc in 0..out_c {
        let o = &mut out[oc * plane..(oc + 1) * plane];
        o.fill(bias[oc]);
        for ic in 0..in_c {
            let inp = &input[ic * plane..(ic + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weights[((oc * in_c + ic) * 3 + ky) * 3 + kx];
                    let (y0, y1) = if ky == 0 { (1, h) } else if ky == 2 { (0, h - 1) } else { (0, h) };
                    let (x0, x1) = if kx == 0 { (1, w) } else if kx == 2 { (0, w - 1) } else { (0, w) };
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let orow = &mut o[y * w + x0..y * w + x1];
                        let irow = &inp[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and (optionally) the input gradient of
/// a 3x3 convolution.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    dout: &[f64],
    out_c: usize,
    dweights: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let plane = h * w;
    for oc in 0..out_c {
        let d = &dout[oc * plane..(oc + 1) * plane];
        dbias[oc] += d.iter().sum::<f64>();
        for ic in 0..in_c {
            let inp = &input[ic * plane..(ic + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((oc * in_c + ic) * 3 + ky) * 3 + kx;
                    let (y0, y1) = if ky == 0 { (1, h) } else if ky == 2 { (0, h - 1) } else { (0, h) };
                    let (x0, x1) = if kx == 0 { (1, w) } else if kx == 2 { (0, w - 1) } else { (0, w) };
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let drow = &d[y * w + x0..y * w + x1];
                        let irow = &inp[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += drow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dweights[widx] += acc;
                    if let Some(di) = dinput.as_deref_mut() {
                        let wv = weights[widx];
                        let dplane = &mut di[ic * plane..(ic + 1) * plane];
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let drow = &d[y * w + x0..y * w + x1];
                            let irow = &mut dplane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (iv, dv) in irow.iter_mut().zip(drow) {
                                *iv += wv * dv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling; returns pooled values and the argmax index (into
/// `input`) of each output, first maximum on ties.
fn maxpool2(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Cross-entropy `-ln softmax(logits)[target]` via log-sum-exp.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Cross-entropy of a probability vector against a one-hot target,
/// `-sum_i y_i ln(p_i)`.
pub fn cross_entropy_probs(probs: &[f64], target: usize) -> f64 {
    -probs[target].ln()
}

struct Trace {
    relu1: Vec<f64>,
    pool1: Vec<f64>,
    pool1_idx: Vec<usize>,
    relu2: Vec<f64>,
    pool2_idx: Vec<usize>,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    arch: ArchConfig,
    params: Vec<f64>,
}

impl ConvNet {
    /// He-normal initialised weights, zero biases.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let l = arch.layout();
        let mut params = vec![0.0; arch.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: Range<usize>, fan_in: usize| {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite");
            for p in &mut params[range] {
                *p = d.sample(&mut rng);
            }
        };
        fill(l.conv1_w.clone(), 9);
        fill(l.conv2_w.clone(), arch.conv1 * 9);
        fill(l.fc1_w.clone(), arch.flat_len());
        fill(l.fc2_w.clone(), arch.hidden);
        Ok(ConvNet { arch, params })
    }

    pub fn from_params(arch: ArchConfig, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(ConvNet { arch, params })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let a = &self.arch;
        let l = a.layout();
        let p = &self.params;
        let (h, w) = (a.in_h, a.in_w);

        let mut relu1 = vec![0.0; a.conv1 * h * w];
        conv3x3_forward(x, 1, h, w, &p[l.conv1_w.clone()], &p[l.conv1_b.clone()], a.conv1, &mut relu1);
        relu_in_place(&mut relu1);
        let (pool1, pool1_idx) = maxpool2(&relu1, a.conv1, h, w);

        let (h2, w2) = (h / 2, w / 2);
        let mut relu2 = vec![0.0; a.conv2 * h2 * w2];
        conv3x3_forward(&pool1, a.conv1, h2, w2, &p[l.conv2_w.clone()], &p[l.conv2_b.clone()], a.conv2, &mut relu2);
        relu_in_place(&mut relu2);
        let (flat, pool2_idx) = maxpool2(&relu2, a.conv2, h2, w2);

        let fl = a.flat_len();
        let w3 = &p[l.fc1_w.clone()];
        let mut hidden: Vec<f64> = p[l.fc1_b.clone()].to_vec();
        for (j, hv) in hidden.iter_mut().enumerate() {
            *hv += w3[j * fl..(j + 1) * fl].iter().zip(&flat).map(|(a, b)| a * b).sum::<f64>();
        }
        relu_in_place(&mut hidden);

        let w4 = &p[l.fc2_w.clone()];
        let mut logits: Vec<f64> = p[l.fc2_b.clone()].to_vec();
        for (k, z) in logits.iter_mut().enumerate() {
            *z += w4[k * a.hidden..(k + 1) * a.hidden].iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
        }

        Trace {
            relu1,
            pool1,
            pool1_idx,
            relu2,
            pool2_idx,
            flat,
            hidden,
            logits,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).logits
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Cross-entropy of one sample; `target` is the output index.
    pub fn loss(&self, x: &[f64], target: usize) -> f64 {
        cross_entropy(&self.logits(x), target)
    }

    /// Adds d(loss)/d(params) for one sample into `grad` and returns the loss.
    pub fn accumulate_gradient(&self, x: &[f64], target: usize, grad: &mut [f64]) -> f64 {
        let a = &self.arch;
        let l = a.layout();
        let p = &self.params;
        let t = self.trace(x);
        let loss = cross_entropy(&t.logits, target);

        // softmax + cross-entropy
        let mut dz = softmax(&t.logits);
        dz[target] -= 1.0;

        let hid = a.hidden;
        let w4 = &p[l.fc2_w.clone()];
        let mut dhidden = vec![0.0; hid];
        {
            let (gw4, gb4) = (l.fc2_w.clone(), l.fc2_b.clone());
            for (k, &d) in dz.iter().enumerate() {
                grad[gb4.start + k] += d;
                let row = &mut grad[gw4.start + k * hid..gw4.start + (k + 1) * hid];
                for (g, hv) in row.iter_mut().zip(&t.hidden) {
                    *g += d * hv;
                }
                for (dh, wv) in dhidden.iter_mut().zip(&w4[k * hid..(k + 1) * hid]) {
                    *dh += d * wv;
                }
            }
        }
        for (dh, hv) in dhidden.iter_mut().zip(&t.hidden) {
            if *hv <= 0.0 {
                *dh = 0.0;
            }
        }

        let fl = a.flat_len();
        let w3 = &p[l.fc1_w.clone()];
        let mut dflat = vec![0.0; fl];
        {
            let (gw3, gb3) = (l.fc1_w.clone(), l.fc1_b.clone());
            for (j, &d) in dhidden.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[gb3.start + j] += d;
                let row = &mut grad[gw3.start + j * fl..gw3.start + (j + 1) * fl];
                for (g, fv) in row.iter_mut().zip(&t.flat) {
                    *g += d * fv;
                }
                for (df, wv) in dflat.iter_mut().zip(&w3[j * fl..(j + 1) * fl]) {
                    *df += d * wv;
                }
            }
        }

        let (h2, w2) = (a.in_h / 2, a.in_w / 2);
        let mut drelu2 = vec![0.0; a.conv2 * h2 * w2];
        for (&i, &d) in t.pool2_idx.iter().zip(&dflat) {
            drelu2[i] += d;
        }
        for (d, r) in drelu2.iter_mut().zip(&t.relu2) {
            if *r <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dpool1 = vec![0.0; a.conv1 * h2 * w2];
        {
            let (gw, gb) = split_pair(grad, l.conv2_w.clone(), l.conv2_b.clone());
            conv3x3_backward(
                &t.pool1,
                a.conv1,
                h2,
                w2,
                &p[l.conv2_w.clone()],
                &drelu2,
                a.conv2,
                gw,
                gb,
                Some(&mut dpool1),
            );
        }

        let mut drelu1 = vec![0.0; a.conv1 * a.in_h * a.in_w];
        for (&i, &d) in t.pool1_idx.iter().zip(&dpool1) {
            drelu1[i] += d;
        }
        for (d, r) in drelu1.iter_mut().zip(&t.relu1) {
            if *r <= 0.0 {
                *d = 0.0;
            }
        }
        {
            let (gw, gb) = split_pair(grad, l.conv1_w.clone(), l.conv1_b.clone());
            conv3x3_backward(x, 1, a.in_h, a.in_w, &p[l.conv1_w.clone()], &drelu1, a.conv1, gw, gb, None);
        }
        loss
    }

    /// Summed loss and summed gradient over a batch. Samples are processed in
    /// fixed-size chunks whose partial sums are added in order, so the result
    /// does not depend on the thread count.
    pub fn batch_gradient(&self, inputs: &[&[f64]], targets: &[usize]) -> (f64, Vec<f64>) {
        const CHUNK: usize = 8;
        let n = self.params.len();
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let partials: Vec<(f64, Vec<f64>)> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; n];
                let mut loss = 0.0;
                for &i in chunk {
                    loss += self.accumulate_gradient(inputs[i], targets[i], &mut g);
                }
                (loss, g)
            })
            .collect();
        let mut total = vec![0.0; n];
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            for (t, v) in total.iter_mut().zip(&g) {
                *t += v;
            }
        }
        (loss, total)
    }
}

/// Two disjoint mutable sub-slices where `a` precedes `b` and they are adjacent.
fn split_pair(grad: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(a.end, b.start);
    let (left, right) = grad[a.start..b.end].split_at_mut(a.end - a.start);
    (left, right)
}
