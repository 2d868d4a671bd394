//! GRU-CNN window classifier.
//!
//! A window of `window_len × input_dim` standardized measurements runs
//! through a GRU layer; the stacked hidden states form a single-channel
//! `window_len × hidden` map that feeds two convolution (ReLU) + 2×2 max
//! pooling stages, a dropout layer and a dense softmax head over the two
//! classes (0 = normal, 1 = FDIA).
//!
//! Gradients are exact backpropagation (through time, for the GRU) of the
//! mean cross-entropy; training uses Adam with bias correction.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub window_len: usize,
    pub hidden: usize,
    pub conv1_kernels: usize,
    pub conv2_kernels: usize,
    /// Square kernel side for both convolutions.
    pub kernel_size: usize,
    /// Square max-pooling window.
    pub pool: usize,
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn standard(input_dim: usize) -> Self {
        Self {
            input_dim,
            window_len: 16,
            hidden: 100,
            conv1_kernels: 8,
            conv2_kernels: 16,
            kernel_size: 3,
            pool: 2,
            dropout_rate: 0.5,
        }
    }

    /// Smallest useful shape: a 4×4 GRU map.
    pub fn tiny(input_dim: usize) -> Self {
        Self {
            input_dim,
            window_len: 4,
            hidden: 4,
            conv1_kernels: 2,
            conv2_kernels: 2,
            kernel_size: 2,
            pool: 2,
            dropout_rate: 0.0,
        }
    }

    /// Spatial sizes after conv1, pool1, conv2, pool2.
    pub fn stage_shapes(&self) -> Result<[(usize, usize); 4]> {
        let k = self.kernel_size;
        let conv = |(h, w): (usize, usize)| -> Result<(usize, usize)> {
            if h < k || w < k {
                return Err(Error::config(format!(
                    "feature map {h}x{w} is smaller than the {k}x{k} kernel"
                )));
            }
            Ok((h - k + 1, w - k + 1))
        };
        let pool = |(h, w): (usize, usize)| (h.div_ceil(self.pool), w.div_ceil(self.pool));
        let c1 = conv((self.window_len, self.hidden))?;
        let p1 = pool(c1);
        let c2 = conv(p1)?;
        let p2 = pool(c2);
        Ok([c1, p1, c2, p2])
    }

    pub fn flat_features(&self) -> Result<usize> {
        let [.., (h, w)] = self.stage_shapes()?;
        Ok(self.conv2_kernels * h * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.window_len == 0
            || self.hidden == 0
            || self.conv1_kernels == 0
            || self.conv2_kernels == 0
            || self.kernel_size == 0
            || self.pool == 0
        {
            return Err(Error::config("network dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        self.stage_shapes().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_xr: Matrix,
    pub w_hr: Matrix,
    pub w_xz: Matrix,
    pub w_hz: Matrix,
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub b_r: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let x = || Matrix::zeros(input_dim, hidden);
        let h = || Matrix::zeros(hidden, hidden);
        Self {
            input_dim,
            hidden,
            w_xr: x(),
            w_hr: h(),
            w_xz: x(),
            w_hz: h(),
            w_xh: x(),
            w_hh: h(),
            b_r: vec![0.0; hidden],
            b_z: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernels: usize,
    pub in_channels: usize,
    pub size: usize,
    /// `[kernel][channel][row][col]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(kernels: usize, in_channels: usize, size: usize) -> Self {
        Self {
            kernels,
            in_channels,
            size,
            weights: vec![0.0; kernels * in_channels * size * size],
            bias: vec![0.0; kernels],
        }
    }

    fn w(&self, k: usize, c: usize, m: usize, n: usize) -> f64 {
        self.weights[((k * self.in_channels + c) * self.size + m) * self.size + n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `inputs × outputs`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Architecture,
    pub gru: GruParams,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub dense: DenseLayer,
}

/// Channel-major stack of 2-D maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMaps {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            channels: 1,
            height: m.rows(),
            width: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }

    fn idx(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(c, i, j)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from the seed.
    Train { seed: u64 },
    Infer,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += vᵀ·M` for a row vector `v`.
fn acc_vec_mat(v: &[f64], m: &Matrix, out: &mut [f64]) {
    let cols = m.cols();
    let data = m.as_slice();
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let row = &data[i * cols..(i + 1) * cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += vi * w;
        }
    }
}

/// `out += M·d` (the backward of `acc_vec_mat`).
fn acc_mat_vec(m: &Matrix, d: &[f64], out: &mut [f64]) {
    let cols = m.cols();
    let data = m.as_slice();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &data[i * cols..(i + 1) * cols];
        *o += row.iter().zip(d).map(|(w, g)| w * g).sum::<f64>();
    }
}

/// `M += v dᵀ`
fn acc_outer(m: &mut Matrix, v: &[f64], d: &[f64]) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let row = &mut data[i * cols..(i + 1) * cols];
        for (w, &g) in row.iter_mut().zip(d) {
            *w += vi * g;
        }
    }
}

#[derive(Debug, Clone)]
struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    candidate: Vec<f64>,
    rh: Vec<f64>,
    h: Vec<f64>,
}

fn gru_step(x: &[f64], h_prev: &[f64], p: &GruParams) -> GruStep {
    let n = p.hidden;
    let mut a_r = p.b_r.clone();
    acc_vec_mat(x, &p.w_xr, &mut a_r);
    acc_vec_mat(h_prev, &p.w_hr, &mut a_r);
    let r: Vec<f64> = a_r.into_iter().map(sigmoid).collect();

    let mut a_z = p.b_z.clone();
    acc_vec_mat(x, &p.w_xz, &mut a_z);
    acc_vec_mat(h_prev, &p.w_hz, &mut a_z);
    let z: Vec<f64> = a_z.into_iter().map(sigmoid).collect();

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut a_h = p.b_h.clone();
    acc_vec_mat(x, &p.w_xh, &mut a_h);
    acc_vec_mat(&rh, &p.w_hh, &mut a_h);
    let candidate: Vec<f64> = a_h.into_iter().map(f64::tanh).collect();

    let h = (0..n)
        .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * candidate[i])
        .collect();
    GruStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        r,
        z,
        candidate,
        rh,
        h,
    }
}

/// One GRU step:
/// `R = σ(xW_xr + hW_hr + b_r)`, `Z = σ(xW_xz + hW_hz + b_z)`,
/// `H̃ = tanh(xW_xh + (R⊙h)W_hh + b_h)`, `H = Z⊙h + (1 − Z)⊙H̃`.
pub fn gru_cell(x_t: &[f64], h_prev: &[f64], p: &GruParams) -> Vec<f64> {
    gru_step(x_t, h_prev, p).h
}

fn gru_forward(window: &Matrix, p: &GruParams) -> Vec<GruStep> {
    let mut h = vec![0.0; p.hidden];
    let mut steps = Vec::with_capacity(window.rows());
    for t in 0..window.rows() {
        let step = gru_step(window.row(t), &h, p);
        h.clone_from(&step.h);
        steps.push(step);
    }
    steps
}

/// Hidden states for every row of the window, starting from `h₀ = 0`.
pub fn gru_sequence(window: &Matrix, p: &GruParams) -> Matrix {
    let steps = gru_forward(window, p);
    let mut out = Matrix::zeros(window.rows(), p.hidden);
    for (t, s) in steps.iter().enumerate() {
        for (j, &v) in s.h.iter().enumerate() {
            out[(t, j)] = v;
        }
    }
    out
}

/// Valid cross-correlation, pre-activation.
fn conv_pre(input: &FeatureMaps, layer: &ConvLayer) -> Result<FeatureMaps> {
    let k = layer.size;
    if input.channels != layer.in_channels {
        return Err(Error::config(format!(
            "convolution expects {} channels, got {}",
            layer.in_channels, input.channels
        )));
    }
    if input.height < k || input.width < k {
        return Err(Error::config(format!(
            "input {}x{} is smaller than the {k}x{k} kernel",
            input.height, input.width
        )));
    }
    let (oh, ow) = (input.height - k + 1, input.width - k + 1);
    let mut out = FeatureMaps::zeros(layer.kernels, oh, ow);
    for kk in 0..layer.kernels {
        let plane = &mut out.data[kk * oh * ow..(kk + 1) * oh * ow];
        plane.fill(layer.bias[kk]);
        for c in 0..input.channels {
            for m in 0..k {
                for n in 0..k {
                    let w = layer.w(kk, c, m, n);
                    if w == 0.0 {
                        continue;
                    }
                    for i in 0..oh {
                        let src = &input.data[input.idx(c, i + m, n)..input.idx(c, i + m, n) + ow];
                        let dst = &mut plane[i * ow..(i + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn relu(mut maps: FeatureMaps) -> FeatureMaps {
    for v in &mut maps.data {
        *v = v.max(0.0);
    }
    maps
}

/// `A_ij = ReLU(Σ_mn w_mn · H_{i+m, j+n} + b)` per kernel, summed over
/// input channels.
pub fn conv_forward(input: &FeatureMaps, layer: &ConvLayer) -> Result<FeatureMaps> {
    Ok(relu(conv_pre(input, layer)?))
}

fn pool_with_argmax(input: &FeatureMaps, window: usize) -> (FeatureMaps, Vec<usize>) {
    let oh = input.height.div_ceil(window);
    let ow = input.width.div_ceil(window);
    let mut out = FeatureMaps::zeros(input.channels, oh, ow);
    let mut arg = vec![0; out.data.len()];
    for c in 0..input.channels {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = input.idx(c, i * window, j * window);
                for di in 0..window {
                    for dj in 0..window {
                        let (y, x) = (i * window + di, j * window + dj);
                        if y >= input.height || x >= input.width {
                            continue;
                        }
                        let idx = input.idx(c, y, x);
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = out.idx(c, i, j);
                out.data[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (out, arg)
}

/// Non-overlapping max pooling; ragged edges are padded with −∞.
pub fn pool_forward(input: &FeatureMaps, window: usize) -> FeatureMaps {
    pool_with_argmax(input, window).0
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn dense_logits(features: &[f64], dense: &DenseLayer) -> Vec<f64> {
    let mut logits = dense.bias.clone();
    acc_vec_mat(features, &dense.weights, &mut logits);
    logits
}

/// Class probabilities from the dense head.
pub fn dense_softmax(features: &[f64], dense: &DenseLayer) -> Vec<f64> {
    softmax(&dense_logits(features, dense))
}

/// Intermediate values kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    gru: Vec<GruStep>,
    map: FeatureMaps,
    conv1_pre: FeatureMaps,
    conv1: FeatureMaps,
    pool1: FeatureMaps,
    pool1_arg: Vec<usize>,
    conv2_pre: FeatureMaps,
    pool2_arg: Vec<usize>,
    conv2_len: usize,
    flat: Vec<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1 − p)).
    mask: Option<Vec<f64>>,
    dropped: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Full forward pass. `Infer` is deterministic and dropout-free.
pub fn forward(net: &Network, window: &Matrix, mode: Mode) -> Result<(Vec<f64>, ForwardCache)> {
    let a = &net.arch;
    if window.shape() != (a.window_len, a.input_dim) {
        return Err(Error::data(format!(
            "window is {:?}, network expects {}x{}",
            window.shape(),
            a.window_len,
            a.input_dim
        )));
    }
    let gru = gru_forward(window, &net.gru);
    let mut map = FeatureMaps::zeros(1, a.window_len, a.hidden);
    for (t, s) in gru.iter().enumerate() {
        map.data[t * a.hidden..(t + 1) * a.hidden].copy_from_slice(&s.h);
    }
    let conv1_pre = conv_pre(&map, &net.conv1)?;
    let conv1 = relu(conv1_pre.clone());
    let (pool1, pool1_arg) = pool_with_argmax(&conv1, a.pool);
    let conv2_pre = conv_pre(&pool1, &net.conv2)?;
    let conv2 = relu(conv2_pre.clone());
    let (pool2, pool2_arg) = pool_with_argmax(&conv2, a.pool);
    let flat = pool2.data;

    let mask = match mode {
        Mode::Train { seed } if a.dropout_rate > 0.0 => {
            Some(dropout_mask(flat.len(), a.dropout_rate, seed))
        }
        _ => None,
    };
    let dropped = match &mask {
        Some(m) => flat.iter().zip(m).map(|(f, k)| f * k).collect(),
        None => flat.clone(),
    };
    let logits = dense_logits(&dropped, &net.dense);
    let probs = softmax(&logits);
    let cache = ForwardCache {
        gru,
        map,
        conv1_pre,
        conv1,
        pool1,
        pool1_arg,
        conv2_pre,
        pool2_arg,
        conv2_len: conv2.data.len(),
        flat,
        mask,
        dropped,
        logits,
        probs: probs.clone(),
    };
    Ok((probs, cache))
}

/// Inference-mode class probabilities.
pub fn probabilities(net: &Network, window: &Matrix) -> Result<Vec<f64>> {
    Ok(forward(net, window, Mode::Infer)?.0)
}

/// FDIA verdict from class probabilities; ties go to the benign class.
pub fn is_attack(probs: &[f64]) -> bool {
    probs[1] > probs[0]
}

pub fn predict(net: &Network, window: &Matrix) -> Result<bool> {
    Ok(is_attack(&probabilities(net, window)?))
}

/// `−ln p_label`, computed from logits.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn conv_backward(
    input: &FeatureMaps,
    pre: &FeatureMaps,
    d_out: &[f64],
    layer: &ConvLayer,
    grad: &mut ConvLayer,
    d_input: Option<&mut FeatureMaps>,
) {
    let k = layer.size;
    let (oh, ow) = (pre.height, pre.width);
    let d_pre: Vec<f64> = d_out
        .iter()
        .zip(&pre.data)
        .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
        .collect();
    for kk in 0..layer.kernels {
        let plane = &d_pre[kk * oh * ow..(kk + 1) * oh * ow];
        grad.bias[kk] += plane.iter().sum::<f64>();
        for c in 0..layer.in_channels {
            for m in 0..k {
                for n in 0..k {
                    let mut acc = 0.0;
                    for i in 0..oh {
                        let src = &input.data[input.idx(c, i + m, n)..input.idx(c, i + m, n) + ow];
                        let g = &plane[i * ow..(i + 1) * ow];
                        acc += src.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad.weights[((kk * layer.in_channels + c) * k + m) * k + n] += acc;
                }
            }
        }
    }
    if let Some(d_in) = d_input {
        for kk in 0..layer.kernels {
            let plane = &d_pre[kk * oh * ow..(kk + 1) * oh * ow];
            for c in 0..layer.in_channels {
                for m in 0..k {
                    for n in 0..k {
                        let w = layer.w(kk, c, m, n);
                        if w == 0.0 {
                            continue;
                        }
                        for i in 0..oh {
                            let start = d_in.idx(c, i + m, n);
                            let dst = &mut d_in.data[start..start + ow];
                            for (d, g) in dst.iter_mut().zip(&plane[i * ow..(i + 1) * ow]) {
                                *d += w * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn gru_backward(steps: &[GruStep], d_h_out: &FeatureMaps, p: &GruParams, g: &mut GruParams) {
    let n = p.hidden;
    let mut d_next = vec![0.0; n];
    for (t, s) in steps.iter().enumerate().rev() {
        let d_h: Vec<f64> = (0..n)
            .map(|j| d_h_out.data[t * n + j] + d_next[j])
            .collect();
        let mut d_prev: Vec<f64> = (0..n).map(|j| d_h[j] * s.z[j]).collect();

        let d_az: Vec<f64> = (0..n)
            .map(|j| d_h[j] * (s.h_prev[j] - s.candidate[j]) * s.z[j] * (1.0 - s.z[j]))
            .collect();
        let d_ah: Vec<f64> = (0..n)
            .map(|j| d_h[j] * (1.0 - s.z[j]) * (1.0 - s.candidate[j] * s.candidate[j]))
            .collect();

        acc_outer(&mut g.w_xh, &s.x, &d_ah);
        acc_outer(&mut g.w_hh, &s.rh, &d_ah);
        for (b, d) in g.b_h.iter_mut().zip(&d_ah) {
            *b += d;
        }
        let mut d_rh = vec![0.0; n];
        acc_mat_vec(&p.w_hh, &d_ah, &mut d_rh);
        let d_ar: Vec<f64> = (0..n)
            .map(|j| d_rh[j] * s.h_prev[j] * s.r[j] * (1.0 - s.r[j]))
            .collect();
        for j in 0..n {
            d_prev[j] += d_rh[j] * s.r[j];
        }

        acc_outer(&mut g.w_xz, &s.x, &d_az);
        acc_outer(&mut g.w_hz, &s.h_prev, &d_az);
        for (b, d) in g.b_z.iter_mut().zip(&d_az) {
            *b += d;
        }
        acc_mat_vec(&p.w_hz, &d_az, &mut d_prev);

        acc_outer(&mut g.w_xr, &s.x, &d_ar);
        acc_outer(&mut g.w_hr, &s.h_prev, &d_ar);
        for (b, d) in g.b_r.iter_mut().zip(&d_ar) {
            *b += d;
        }
        acc_mat_vec(&p.w_hr, &d_ar, &mut d_prev);

        d_next = d_prev;
    }
}

/// Accumulates `scale · ∂loss/∂θ` for one cached sample into `grads`.
fn backward(net: &Network, cache: &ForwardCache, label: usize, scale: f64, grads: &mut Network) {
    let a = &net.arch;
    let d_logits: Vec<f64> = cache
        .probs
        .iter()
        .enumerate()
        .map(|(c, p)| scale * (p - if c == label { 1.0 } else { 0.0 }))
        .collect();

    acc_outer(&mut grads.dense.weights, &cache.dropped, &d_logits);
    for (b, d) in grads.dense.bias.iter_mut().zip(&d_logits) {
        *b += d;
    }
    let mut d_flat = vec![0.0; cache.flat.len()];
    acc_mat_vec(&net.dense.weights, &d_logits, &mut d_flat);
    if let Some(mask) = &cache.mask {
        for (d, m) in d_flat.iter_mut().zip(mask) {
            *d *= m;
        }
    }

    let mut d_conv2 = vec![0.0; cache.conv2_len];
    for (o, &src) in cache.pool2_arg.iter().enumerate() {
        d_conv2[src] += d_flat[o];
    }
    let mut d_pool1 = FeatureMaps::zeros(
        cache.pool1.channels,
        cache.pool1.height,
        cache.pool1.width,
    );
    conv_backward(
        &cache.pool1,
        &cache.conv2_pre,
        &d_conv2,
        &net.conv2,
        &mut grads.conv2,
        Some(&mut d_pool1),
    );

    let mut d_conv1 = vec![0.0; cache.conv1.data.len()];
    for (o, &src) in cache.pool1_arg.iter().enumerate() {
        d_conv1[src] += d_pool1.data[o];
    }
    let mut d_map = FeatureMaps::zeros(1, a.window_len, a.hidden);
    conv_backward(
        &cache.map,
        &cache.conv1_pre,
        &d_conv1,
        &net.conv1,
        &mut grads.conv1,
        Some(&mut d_map),
    );

    gru_backward(&cache.gru, &d_map, &net.gru, &mut grads.gru);
}

/// Seed for the dropout mask of one sample.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean cross-entropy and its gradient over a batch.
///
/// With `dropout_seed = Some(s)` sample `i` uses the mask drawn from
/// `sample_seed(s, i)`; `None` evaluates in inference mode.
pub fn gradients(
    net: &Network,
    windows: &[&Matrix],
    labels: &[u8],
    dropout_seed: Option<u64>,
) -> Result<(Network, f64)> {
    if windows.is_empty() {
        return Err(Error::data("gradient batch is empty"));
    }
    if windows.len() != labels.len() {
        return Err(Error::data("windows and labels differ in length"));
    }
    let mut grads = net.zeros_like();
    let scale = 1.0 / windows.len() as f64;
    let mut loss = 0.0;
    for (i, (w, &label)) in windows.iter().zip(labels).enumerate() {
        let mode = match dropout_seed {
            Some(s) => Mode::Train {
                seed: sample_seed(s, i as u64),
            },
            None => Mode::Infer,
        };
        let (_, cache) = forward(net, w, mode)?;
        let label = usize::from(label);
        loss += cross_entropy(&cache.logits, label);
        backward(net, &cache, label, scale, &mut grads);
    }
    Ok((grads, loss * scale))
}

/// Mean cross-entropy in inference mode.
pub fn mean_loss(net: &Network, windows: &[Matrix], labels: &[u8]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::data("cannot evaluate loss on an empty set"));
    }
    let mut total = 0.0;
    for (w, &l) in windows.iter().zip(labels) {
        let (_, cache) = forward(net, w, Mode::Infer)?;
        total += cross_entropy(&cache.logits, usize::from(l));
    }
    Ok(total / windows.len() as f64)
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(arch)?;
        let (d, h) = (arch.input_dim, arch.hidden);
        let k2 = arch.kernel_size * arch.kernel_size;
        let flat = arch.flat_features()?;
        let mut fill = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w {
                *v = rng.random_range(-r..r);
            }
        };
        let g = &mut net.gru;
        fill(g.w_xr.as_mut_slice(), d, h);
        fill(g.w_hr.as_mut_slice(), h, h);
        fill(g.w_xz.as_mut_slice(), d, h);
        fill(g.w_hz.as_mut_slice(), h, h);
        fill(g.w_xh.as_mut_slice(), d, h);
        fill(g.w_hh.as_mut_slice(), h, h);
        fill(&mut net.conv1.weights, k2, arch.conv1_kernels * k2);
        fill(
            &mut net.conv2.weights,
            arch.conv1_kernels * k2,
            arch.conv2_kernels * k2,
        );
        fill(net.dense.weights.as_mut_slice(), flat, CLASSES);
        Ok(net)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let flat = arch.flat_features()?;
        Ok(Self {
            arch,
            gru: GruParams::zeros(arch.input_dim, arch.hidden),
            conv1: ConvLayer::zeros(arch.conv1_kernels, 1, arch.kernel_size),
            conv2: ConvLayer::zeros(arch.conv2_kernels, arch.conv1_kernels, arch.kernel_size),
            dense: DenseLayer {
                weights: Matrix::zeros(flat, CLASSES),
                bias: vec![0.0; CLASSES],
            },
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub const TENSOR_NAMES: [&'static str; 15] = [
        "gru.w_xr", "gru.w_hr", "gru.w_xz", "gru.w_hz", "gru.w_xh", "gru.w_hh", "gru.b_r",
        "gru.b_z", "gru.b_h", "conv1.weights", "conv1.bias", "conv2.weights", "conv2.bias",
        "dense.weights", "dense.bias",
    ];

    /// Every trainable tensor, in [`Network::TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 15] {
        let g = &self.gru;
        [
            g.w_xr.as_slice(),
            g.w_hr.as_slice(),
            g.w_xz.as_slice(),
            g.w_hz.as_slice(),
            g.w_xh.as_slice(),
            g.w_hh.as_slice(),
            &g.b_r,
            &g.b_z,
            &g.b_h,
            &self.conv1.weights,
            &self.conv1.bias,
            &self.conv2.weights,
            &self.conv2.bias,
            self.dense.weights.as_slice(),
            &self.dense.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 15] {
        let g = &mut self.gru;
        [
            g.w_xr.as_mut_slice(),
            g.w_hr.as_mut_slice(),
            g.w_xz.as_mut_slice(),
            g.w_hz.as_mut_slice(),
            g.w_xh.as_mut_slice(),
            g.w_hh.as_mut_slice(),
            &mut g.b_r,
            &mut g.b_z,
            &mut g.b_h,
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            self.dense.weights.as_mut_slice(),
            &mut self.dense.bias,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn gradient_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling applied before each Adam step.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            batch: 32,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::config("Adam betas must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0) || self.batch == 0 {
            return Err(Error::config("epsilon and batch size must be positive"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("clip norm must be positive"));
        }
        Ok(())
    }
}

/// Adam moment estimates, one buffer per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let shapes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Self {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Rescales `grads` so its global L2 norm is at most `limit`.
pub fn clip_gradients(grads: &mut Network, limit: f64) {
    let norm = grads.gradient_norm();
    if norm > limit {
        let s = limit / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(net: &mut Network, grads: &Network, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in net
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Windows with 0/1 labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowSet {
    pub windows: Vec<Matrix>,
    pub labels: Vec<u8>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Mini-batch Adam training with seeded shuffling and dropout.
///
/// Losses in the history are inference-mode means over the full training
/// (and validation) sets after each epoch.
pub fn train(
    arch: Architecture,
    data: &WindowSet,
    validation: Option<&WindowSet>,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochLoss>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let mut net = Network::init(arch, cfg.seed)?;
    let mut adam = AdamState::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let windows: Vec<&Matrix> = chunk.iter().map(|&i| &data.windows[i]).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();
            let batch_seed = sample_seed(cfg.seed, ((epoch as u64) << 32) | b as u64);
            let (mut grads, _) = gradients(&net, &windows, &labels, Some(batch_seed))?;
            if let Some(limit) = cfg.clip_norm {
                clip_gradients(&mut grads, limit);
            }
            adam_step(&mut net, &grads, &mut adam, cfg);
        }
        let train_loss = mean_loss(&net, &data.windows, &data.labels)?;
        let val_loss = match validation {
            Some(v) if !v.is_empty() => Some(mean_loss(&net, &v.windows, &v.labels)?),
            _ => None,
        };
        history.push(EpochLoss {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });
    }
    Ok((net, history))
}

/// Writes `epoch,train_loss,val_loss`.
pub fn write_history_csv<W: std::io::Write>(history: &[EpochLoss], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for h in history {
        w.write_record(&[
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.val_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Serialized network plus the feature standardization it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub network: Network,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<crate::pipeline::Standardizer>,
}

impl Checkpoint {
    pub fn new(network: Network, standardizer: Option<crate::pipeline::Standardizer>) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            network,
            standardizer,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        let fresh = Network::zeros(ck.network.arch)?;
        let shapes_match = fresh
            .tensors()
            .iter()
            .zip(ck.network.tensors())
            .all(|(a, b)| a.len() == b.len());
        if !shapes_match {
            return Err(Error::data("checkpoint tensors do not match its architecture"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
