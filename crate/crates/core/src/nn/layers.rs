//! Layer primitives with explicit forward and backward passes.
//!
//! Loop ordering is chosen for the NHWC layout: the innermost loop always
//! runs over the output-channel axis where weights and activations are
//! contiguous, so the hot loops vectorize.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor4;

pub const KERNEL: usize = 3;

/// Weights for one convolution: flat `[ky][kx][cin][cout]`, bias `[cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub cin: usize,
    pub cout: usize,
}

impl ConvParams {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        ConvParams {
            weights: vec![0.0; KERNEL * KERNEL * cin * cout],
            bias: vec![0.0; cout],
            cin,
            cout,
        }
    }

    #[inline]
    fn widx(&self, ky: usize, kx: usize, cin: usize, cout: usize) -> usize {
        (((ky * KERNEL) + kx) * self.cin + cin) * self.cout + cout
    }
}

/// 3x3 cross-correlation, stride 1, zero padding 1 ("same" output).
pub fn conv2d_forward(input: &Tensor4, p: &ConvParams) -> Result<Tensor4> {
    let [n, h, w, cin] = input.shape;
    if cin != p.cin {
        return Err(Error::ShapeMismatch(format!(
            "conv input channels {} != {}",
            cin, p.cin
        )));
    }
    let cout = p.cout;
    let mut out = Tensor4::zeros([n, h, w, cout]);
    for b in 0..n {
        for oy in 0..h {
            for ox in 0..w {
                let obase = out.idx(b, oy, ox, 0);
                out.data[obase..obase + cout].copy_from_slice(&p.bias);
                for ky in 0..KERNEL {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = ox as isize + kx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let ibase = input.idx(b, iy as usize, ix as usize, 0);
                        for ci in 0..cin {
                            let a = input.data[ibase + ci];
                            if a == 0.0 {
                                continue;
                            }
                            let wbase = p.widx(ky, kx, ci, 0);
                            let wrow = &p.weights[wbase..wbase + cout];
                            let orow = &mut out.data[obase..obase + cout];
                            for co in 0..cout {
                                orow[co] += a * wrow[co];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub d_input: Tensor4,
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

pub fn conv2d_backward(input: &Tensor4, p: &ConvParams, d_out: &Tensor4) -> Result<ConvGrads> {
    let [n, h, w, cin] = input.shape;
    if d_out.shape != [n, h, w, p.cout] {
        return Err(Error::ShapeMismatch("conv backward d_out shape".into()));
    }
    let cout = p.cout;
    let mut d_input = Tensor4::zeros(input.shape);
    let mut d_weights = vec![0.0; p.weights.len()];
    let mut d_bias = vec![0.0; cout];

    for b in 0..n {
        for oy in 0..h {
            for ox in 0..w {
                let obase = d_out.idx(b, oy, ox, 0);
                let drow = &d_out.data[obase..obase + cout];
                for co in 0..cout {
                    d_bias[co] += drow[co];
                }
                for ky in 0..KERNEL {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = ox as isize + kx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let ibase = input.idx(b, iy as usize, ix as usize, 0);
                        for ci in 0..cin {
                            let wbase = p.widx(ky, kx, ci, 0);
                            let wrow = &p.weights[wbase..wbase + cout];
                            let a = input.data[ibase + ci];
                            let mut acc = 0.0;
                            let dwrow = &mut d_weights[wbase..wbase + cout];
                            for co in 0..cout {
                                let g = drow[co];
                                acc += g * wrow[co];
                                dwrow[co] += a * g;
                            }
                            d_input.data[ibase + ci] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        d_input,
        d_weights,
        d_bias,
    })
}

/// 2x2 max pooling, stride 2; `argmax` stores the flat input index that won
/// each window (first index wins ties) for gradient routing.
pub struct PoolCache {
    pub argmax: Vec<usize>,
    pub in_shape: [usize; 4],
}

pub fn maxpool2_forward(input: &Tensor4) -> Result<(Tensor4, PoolCache)> {
    let [n, h, w, c] = input.shape;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatialDim(h, w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, oh, ow, c]);
    let mut argmax = vec![0usize; out.len()];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_i = input.idx(b, oy * 2, ox * 2, ch);
                    let mut best = input.data[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = input.idx(b, oy * 2 + dy, ox * 2 + dx, ch);
                        if input.data[i] > best {
                            best = input.data[i];
                            best_i = i;
                        }
                    }
                    let o = out.idx(b, oy, ox, ch);
                    out.data[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
    }
    Ok((
        out,
        PoolCache {
            argmax,
            in_shape: input.shape,
        },
    ))
}

pub fn maxpool2_backward(cache: &PoolCache, d_out: &Tensor4) -> Tensor4 {
    let mut d_input = Tensor4::zeros(cache.in_shape);
    for (o, &i) in cache.argmax.iter().enumerate() {
        d_input.data[i] += d_out.data[o];
    }
    d_input
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel batch-norm parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnParams {
    pub fn new(channels: usize) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

pub struct BnCache {
    pub x_hat: Tensor4,
    pub inv_std: Vec<f64>,
    /// true when the pass used batch statistics (train mode)
    pub batch_stats: bool,
}

/// Batch statistics produced by a train-mode pass; the caller folds them
/// into the running stats with [`BnParams::update_running`].
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnParams {
    pub fn update_running(&mut self, stats: &BnBatchStats) {
        for ch in 0..self.running_mean.len() {
            self.running_mean[ch] =
                BN_MOMENTUM * self.running_mean[ch] + (1.0 - BN_MOMENTUM) * stats.mean[ch];
            self.running_var[ch] =
                BN_MOMENTUM * self.running_var[ch] + (1.0 - BN_MOMENTUM) * stats.var[ch];
        }
    }
}

/// Train-mode forward: normalize per channel over (batch, H, W) with batch
/// statistics. Running stats are returned, not applied.
pub fn batchnorm_forward_train(
    input: &Tensor4,
    p: &BnParams,
) -> Result<(Tensor4, BnCache, BnBatchStats)> {
    let [n, h, w, c] = input.shape;
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let m = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for chunk in input.data.chunks_exact(c) {
        for (ch, &v) in chunk.iter().enumerate() {
            mean[ch] += v;
        }
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    for chunk in input.data.chunks_exact(c) {
        for (ch, &v) in chunk.iter().enumerate() {
            let d = v - mean[ch];
            var[ch] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= m;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut x_hat = Tensor4::zeros(input.shape);
    let mut out = Tensor4::zeros(input.shape);
    for (i, chunk) in input.data.chunks_exact(c).enumerate() {
        for (ch, &v) in chunk.iter().enumerate() {
            let xh = (v - mean[ch]) * inv_std[ch];
            x_hat.data[i * c + ch] = xh;
            out.data[i * c + ch] = p.gamma[ch] * xh + p.beta[ch];
        }
    }
    Ok((
        out,
        BnCache {
            x_hat,
            inv_std,
            batch_stats: true,
        },
        BnBatchStats { mean, var },
    ))
}

/// Inference-mode forward using running statistics.
pub fn batchnorm_forward_infer(input: &Tensor4, p: &BnParams) -> (Tensor4, BnCache) {
    let c = input.shape[3];
    let inv_std: Vec<f64> = p
        .running_var
        .iter()
        .map(|&v| 1.0 / (v + BN_EPS).sqrt())
        .collect();
    let mut x_hat = Tensor4::zeros(input.shape);
    let mut out = Tensor4::zeros(input.shape);
    for (i, chunk) in input.data.chunks_exact(c).enumerate() {
        for (ch, &v) in chunk.iter().enumerate() {
            let xh = (v - p.running_mean[ch]) * inv_std[ch];
            x_hat.data[i * c + ch] = xh;
            out.data[i * c + ch] = p.gamma[ch] * xh + p.beta[ch];
        }
    }
    (
        out,
        BnCache {
            x_hat,
            inv_std,
            batch_stats: false,
        },
    )
}

pub struct BnGrads {
    pub d_input: Tensor4,
    pub d_gamma: Vec<f64>,
    pub d_beta: Vec<f64>,
}

pub fn batchnorm_backward(p: &BnParams, cache: &BnCache, d_out: &Tensor4) -> BnGrads {
    let [n, h, w, c] = d_out.shape;
    let m = (n * h * w) as f64;
    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for (i, chunk) in d_out.data.chunks_exact(c).enumerate() {
        for (ch, &g) in chunk.iter().enumerate() {
            d_gamma[ch] += g * cache.x_hat.data[i * c + ch];
            d_beta[ch] += g;
        }
    }
    let mut d_input = Tensor4::zeros(d_out.shape);
    if cache.batch_stats {
        // full batch-norm gradient
        for (i, chunk) in d_out.data.chunks_exact(c).enumerate() {
            for (ch, &g) in chunk.iter().enumerate() {
                let xh = cache.x_hat.data[i * c + ch];
                d_input.data[i * c + ch] = p.gamma[ch] * cache.inv_std[ch] / m
                    * (m * g - d_beta[ch] - xh * d_gamma[ch]);
            }
        }
    } else {
        // running stats are constants at inference
        for (i, chunk) in d_out.data.chunks_exact(c).enumerate() {
            for (ch, &g) in chunk.iter().enumerate() {
                d_input.data[i * c + ch] = p.gamma[ch] * cache.inv_std[ch] * g;
            }
        }
    }
    BnGrads {
        d_input,
        d_gamma,
        d_beta,
    }
}

pub fn relu_forward(input: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    for v in out.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// `activated` is the relu output; gradient passes where it is positive.
pub fn relu_backward(activated: &Tensor4, d_out: &Tensor4) -> Tensor4 {
    let mut d_input = d_out.clone();
    for (d, &a) in d_input.data.iter_mut().zip(activated.data.iter()) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
    d_input
}

/// Inverted-dropout mask: entries are 0 or 1/(1-rate).
pub struct DropoutMask {
    pub scale: Vec<f64>,
    pub per_channel: bool,
}

/// Spatial dropout: zero whole channels per sample, scale survivors.
pub fn spatial_dropout_forward(
    input: &Tensor4,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Tensor4, DropoutMask) {
    assert!((0.0..1.0).contains(&rate));
    let [n, h, w, c] = input.shape;
    let keep = 1.0 - rate;
    let mut scale = vec![0.0; n * c];
    for s in scale.iter_mut() {
        *s = if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep };
    }
    let mut out = Tensor4::zeros(input.shape);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let base = input.idx(b, y, x, 0);
                for ch in 0..c {
                    out.data[base + ch] = input.data[base + ch] * scale[b * c + ch];
                }
            }
        }
    }
    (
        out,
        DropoutMask {
            scale,
            per_channel: true,
        },
    )
}

/// Plain (unit) dropout for dense activations, shape (N,1,1,C).
pub fn unit_dropout_forward(
    input: &Tensor4,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Tensor4, DropoutMask) {
    assert!((0.0..1.0).contains(&rate));
    let keep = 1.0 - rate;
    let mut scale = vec![0.0; input.len()];
    for s in scale.iter_mut() {
        *s = if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep };
    }
    let mut out = input.clone();
    for (v, &s) in out.data.iter_mut().zip(scale.iter()) {
        *v *= s;
    }
    (
        out,
        DropoutMask {
            scale,
            per_channel: false,
        },
    )
}

pub fn dropout_backward(input_shape: [usize; 4], mask: &DropoutMask, d_out: &Tensor4) -> Tensor4 {
    let mut d_input = d_out.clone();
    if mask.per_channel {
        let [n, h, w, c] = input_shape;
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let base = d_input.idx(b, y, x, 0);
                    for ch in 0..c {
                        d_input.data[base + ch] *= mask.scale[b * c + ch];
                    }
                }
            }
        }
    } else {
        for (d, &s) in d_input.data.iter_mut().zip(mask.scale.iter()) {
            *d *= s;
        }
    }
    d_input
}

/// Fully connected layer; weights flat `[in][out]`, inputs shape (N,1,1,In).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub din: usize,
    pub dout: usize,
}

impl DenseParams {
    pub fn zeros(din: usize, dout: usize) -> Self {
        DenseParams {
            weights: vec![0.0; din * dout],
            bias: vec![0.0; dout],
            din,
            dout,
        }
    }
}

pub fn dense_forward(input: &Tensor4, p: &DenseParams) -> Result<Tensor4> {
    let [n, h, w, c] = input.shape;
    let din = h * w * c;
    if din != p.din {
        return Err(Error::ShapeMismatch(format!(
            "dense input dim {} != {}",
            din, p.din
        )));
    }
    let mut out = Tensor4::zeros([n, 1, 1, p.dout]);
    for b in 0..n {
        let orow = &mut out.data[b * p.dout..(b + 1) * p.dout];
        orow.copy_from_slice(&p.bias);
        let xrow = &input.data[b * din..(b + 1) * din];
        for (i, &a) in xrow.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let wrow = &p.weights[i * p.dout..(i + 1) * p.dout];
            for j in 0..p.dout {
                orow[j] += a * wrow[j];
            }
        }
    }
    Ok(out)
}

pub struct DenseGrads {
    pub d_input: Tensor4,
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

pub fn dense_backward(input: &Tensor4, p: &DenseParams, d_out: &Tensor4) -> Result<DenseGrads> {
    let n = input.shape[0];
    let din = p.din;
    if d_out.shape != [n, 1, 1, p.dout] {
        return Err(Error::ShapeMismatch("dense backward d_out shape".into()));
    }
    let mut d_input = Tensor4::zeros(input.shape);
    let mut d_weights = vec![0.0; p.weights.len()];
    let mut d_bias = vec![0.0; p.dout];
    for b in 0..n {
        let drow = &d_out.data[b * p.dout..(b + 1) * p.dout];
        for j in 0..p.dout {
            d_bias[j] += drow[j];
        }
        let xrow = &input.data[b * din..(b + 1) * din];
        for i in 0..din {
            let wrow = &p.weights[i * p.dout..(i + 1) * p.dout];
            let dwrow = &mut d_weights[i * p.dout..(i + 1) * p.dout];
            let a = xrow[i];
            let mut acc = 0.0;
            for j in 0..p.dout {
                acc += drow[j] * wrow[j];
                dwrow[j] += a * drow[j];
            }
            d_input.data[b * din + i] = acc;
        }
    }
    Ok(DenseGrads {
        d_input,
        d_weights,
        d_bias,
    })
}
