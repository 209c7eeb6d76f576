//! Dense `f32` tensors and the handful of differentiable layers the network needs.
//!
//! Everything here is row-major. Convolutions are valid (no padding) and run over
//! the last axis of a `[batch, channels, time]` tensor. Backward passes are written
//! out by hand for each op; there is no tape.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f32) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::dim(format!(
                "{what} must have rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

fn conv_out_len(t: usize, kh: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::param("convolution stride must be positive"));
    }
    if kh == 0 || t < kh {
        return Err(Error::dim(format!(
            "time length {t} shorter than kernel height {kh}"
        )));
    }
    Ok((t - kh) / stride + 1)
}

/// Valid 1D convolution (cross-correlation) of `[batch, c_in, t]` with `[c_out, c_in, kh]`.
pub fn conv1d_forward(
    input: &DenseTensor,
    kernel: &DenseTensor,
    stride: usize,
) -> Result<DenseTensor> {
    input.expect_rank(3, "conv input")?;
    kernel.expect_rank(3, "conv kernel")?;
    let (n, c_in, t) = (input.shape[0], input.shape[1], input.shape[2]);
    let (c_out, kc, kh) = (kernel.shape[0], kernel.shape[1], kernel.shape[2]);
    if kc != c_in {
        return Err(Error::dim(format!(
            "kernel expects {kc} input channels, input has {c_in}"
        )));
    }
    let t_out = conv_out_len(t, kh, stride)?;
    let mut out = vec![0.0f32; n * c_out * t_out];
    for b in 0..n {
        let x = &input.data[b * c_in * t..(b + 1) * c_in * t];
        for o in 0..c_out {
            let y = &mut out[(b * c_out + o) * t_out..(b * c_out + o + 1) * t_out];
            for c in 0..c_in {
                let xc = &x[c * t..(c + 1) * t];
                let kr = &kernel.data[(o * c_in + c) * kh..(o * c_in + c + 1) * kh];
                for (j, &w) in kr.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    if stride == 1 {
                        for (yv, &xv) in y.iter_mut().zip(&xc[j..j + t_out]) {
                            *yv += w * xv;
                        }
                    } else {
                        for (i, yv) in y.iter_mut().enumerate() {
                            *yv += w * xc[i * stride + j];
                        }
                    }
                }
            }
        }
    }
    DenseTensor::new(vec![n, c_out, t_out], out)
}

/// Gradient of [`conv1d_forward`] with respect to its kernel.
pub fn conv1d_backward_kernel(
    grad_out: &DenseTensor,
    input: &DenseTensor,
    kernel_shape: &[usize],
    stride: usize,
) -> Result<DenseTensor> {
    let (n, c_in, t, c_out, kh, t_out) = conv_dims(grad_out, input, kernel_shape, stride)?;
    let mut gk = vec![0.0f32; c_out * c_in * kh];
    for b in 0..n {
        let x = &input.data[b * c_in * t..(b + 1) * c_in * t];
        for o in 0..c_out {
            let g = &grad_out.data[(b * c_out + o) * t_out..(b * c_out + o + 1) * t_out];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for c in 0..c_in {
                let xc = &x[c * t..(c + 1) * t];
                let gr = &mut gk[(o * c_in + c) * kh..(o * c_in + c + 1) * kh];
                for (j, gv) in gr.iter_mut().enumerate() {
                    let acc: f32 = if stride == 1 {
                        g.iter().zip(&xc[j..j + t_out]).map(|(a, b)| a * b).sum()
                    } else {
                        g.iter()
                            .enumerate()
                            .map(|(i, a)| a * xc[i * stride + j])
                            .sum()
                    };
                    *gv += acc;
                }
            }
        }
    }
    DenseTensor::new(kernel_shape.to_vec(), gk)
}

/// Gradient of [`conv1d_forward`] with respect to its input.
pub fn conv1d_backward_input(
    grad_out: &DenseTensor,
    input_shape: &[usize],
    kernel: &DenseTensor,
    stride: usize,
) -> Result<DenseTensor> {
    if input_shape.len() != 3 {
        return Err(Error::dim("conv input must have rank 3"));
    }
    let (n, c_in, t) = (input_shape[0], input_shape[1], input_shape[2]);
    let (c_out, kc, kh) = (kernel.shape[0], kernel.shape[1], kernel.shape[2]);
    if kc != c_in {
        return Err(Error::dim(format!(
            "kernel expects {kc} input channels, input has {c_in}"
        )));
    }
    let t_out = conv_out_len(t, kh, stride)?;
    if grad_out.shape != [n, c_out, t_out] {
        return Err(Error::dim(format!(
            "grad_out shape {:?} does not match conv output [{n}, {c_out}, {t_out}]",
            grad_out.shape
        )));
    }
    let mut gi = vec![0.0f32; n * c_in * t];
    for b in 0..n {
        let gx = &mut gi[b * c_in * t..(b + 1) * c_in * t];
        for o in 0..c_out {
            let g = &grad_out.data[(b * c_out + o) * t_out..(b * c_out + o + 1) * t_out];
            for c in 0..c_in {
                let gxc = &mut gx[c * t..(c + 1) * t];
                let kr = &kernel.data[(o * c_in + c) * kh..(o * c_in + c + 1) * kh];
                for (j, &w) in kr.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    if stride == 1 {
                        for (xv, &gv) in gxc[j..j + t_out].iter_mut().zip(g) {
                            *xv += w * gv;
                        }
                    } else {
                        for (i, &gv) in g.iter().enumerate() {
                            gxc[i * stride + j] += w * gv;
                        }
                    }
                }
            }
        }
    }
    DenseTensor::new(input_shape.to_vec(), gi)
}

/// Both gradients of [`conv1d_forward`]: `(grad_input, grad_kernel)`.
pub fn conv1d_backward(
    grad_out: &DenseTensor,
    input: &DenseTensor,
    kernel: &DenseTensor,
    stride: usize,
) -> Result<(DenseTensor, DenseTensor)> {
    let gk = conv1d_backward_kernel(grad_out, input, &kernel.shape, stride)?;
    let gi = conv1d_backward_input(grad_out, &input.shape, kernel, stride)?;
    Ok((gi, gk))
}

type ConvDims = (usize, usize, usize, usize, usize, usize);

fn conv_dims(
    grad_out: &DenseTensor,
    input: &DenseTensor,
    kernel_shape: &[usize],
    stride: usize,
) -> Result<ConvDims> {
    input.expect_rank(3, "conv input")?;
    if kernel_shape.len() != 3 {
        return Err(Error::dim("conv kernel must have rank 3"));
    }
    let (n, c_in, t) = (input.shape[0], input.shape[1], input.shape[2]);
    let (c_out, kc, kh) = (kernel_shape[0], kernel_shape[1], kernel_shape[2]);
    if kc != c_in {
        return Err(Error::dim(format!(
            "kernel expects {kc} input channels, input has {c_in}"
        )));
    }
    let t_out = conv_out_len(t, kh, stride)?;
    if grad_out.shape != [n, c_out, t_out] {
        return Err(Error::dim(format!(
            "grad_out shape {:?} does not match conv output [{n}, {c_out}, {t_out}]",
            grad_out.shape
        )));
    }
    Ok((n, c_in, t, c_out, kh, t_out))
}

/// Non-overlapping max-pool over the last axis. A trailing remainder shorter than
/// `pool` is dropped. Returns the pooled tensor and, for every output element, the
/// flat index of the input element it came from (first maximum on ties).
pub fn maxpool1d(input: &DenseTensor, pool: usize) -> Result<(DenseTensor, Vec<usize>)> {
    if pool < 1 {
        return Err(Error::param("pool size must be at least 1"));
    }
    if input.shape.is_empty() {
        return Err(Error::dim("cannot pool a rank-0 tensor"));
    }
    let t = *input.shape.last().unwrap();
    let rows = if t == 0 { 0 } else { input.data.len() / t };
    let t_out = t / pool;
    let mut shape = input.shape.clone();
    *shape.last_mut().unwrap() = t_out;
    let mut out = Vec::with_capacity(rows * t_out);
    let mut arg = Vec::with_capacity(rows * t_out);
    for r in 0..rows {
        let row = &input.data[r * t..(r + 1) * t];
        for w in 0..t_out {
            let mut best = w * pool;
            for i in w * pool + 1..(w + 1) * pool {
                if row[i] > row[best] {
                    best = i;
                }
            }
            out.push(row[best]);
            arg.push(r * t + best);
        }
    }
    Ok((DenseTensor::new(shape, out)?, arg))
}

/// Routes each pooled gradient back to the input position that won the max.
pub fn maxpool1d_backward(
    grad_out: &DenseTensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<DenseTensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::dim("argmax length does not match pooled gradient"));
    }
    let mut g = DenseTensor::zeros(input_shape);
    for (&i, &v) in argmax.iter().zip(&grad_out.data) {
        g.data[i] += v;
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f32 = 0.1;
    pub const DEFAULT_EPS: f32 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `sqrt(running_var + eps)`, the σ used at inference.
    pub fn running_sigma(&self) -> Vec<f32> {
        self.running_var
            .iter()
            .map(|&v| (v + self.eps).sqrt())
            .collect()
    }
}

/// Intermediates kept by a training-mode batch-norm forward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: DenseTensor,
    pub inv_std: Vec<f32>,
}

/// Channel axis is 1; statistics are taken over every other axis.
fn bn_layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::dim(format!(
            "batch norm over {channels} channels cannot take shape {shape:?}"
        )));
    }
    let outer = shape[0];
    let inner: usize = shape[2..].iter().product();
    Ok((outer, inner))
}

/// `γ·(x−μ)/σ + β` per channel. Training mode normalizes with batch statistics and
/// folds them into the running averages; inference mode uses the running averages.
pub fn batchnorm_forward(
    input: &DenseTensor,
    state: &mut BatchNormState,
    training: bool,
) -> Result<(DenseTensor, BatchNormCache)> {
    let c = state.channels();
    let (outer, inner) = bn_layout(&input.shape, c)?;
    let count = outer * inner;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    if training {
        if count == 0 {
            return Err(Error::dim("batch norm on an empty batch"));
        }
        for b in 0..outer {
            for (ch, m) in mean.iter_mut().enumerate() {
                let s = &input.data[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                *m += s.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        for b in 0..outer {
            for ch in 0..c {
                let s = &input.data[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                let m = mean[ch];
                var[ch] += s
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - m;
                        d * d
                    })
                    .sum::<f64>();
            }
        }
        for v in var.iter_mut() {
            *v /= count as f64;
        }
        let mom = state.momentum as f64;
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        for ch in 0..c {
            state.running_mean[ch] =
                ((1.0 - mom) * state.running_mean[ch] as f64 + mom * mean[ch]) as f32;
            state.running_var[ch] =
                ((1.0 - mom) * state.running_var[ch] as f64 + mom * var[ch] * unbias) as f32;
        }
    } else {
        for ch in 0..c {
            mean[ch] = state.running_mean[ch] as f64;
            var[ch] = state.running_var[ch] as f64;
        }
    }
    let inv_std: Vec<f32> = var
        .iter()
        .map(|&v| (1.0 / (v + state.eps as f64).sqrt()) as f32)
        .collect();
    let mut x_hat = vec![0.0f32; input.len()];
    let mut out = vec![0.0f32; input.len()];
    for b in 0..outer {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            let m = mean[ch] as f32;
            let (g, be, is) = (state.gamma[ch], state.beta[ch], inv_std[ch]);
            for i in base..base + inner {
                let xh = (input.data[i] - m) * is;
                x_hat[i] = xh;
                out[i] = g * xh + be;
            }
        }
    }
    Ok((
        DenseTensor::new(input.shape.clone(), out)?,
        BatchNormCache {
            x_hat: DenseTensor::new(input.shape.clone(), x_hat)?,
            inv_std,
        },
    ))
}

/// Training-mode batch-norm backward: `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    grad_out: &DenseTensor,
    cache: &BatchNormCache,
    gamma: &[f32],
) -> Result<(DenseTensor, Vec<f32>, Vec<f32>)> {
    let c = gamma.len();
    let (outer, inner) = bn_layout(&grad_out.shape, c)?;
    if cache.x_hat.shape != grad_out.shape {
        return Err(Error::dim("batch norm cache does not match gradient shape"));
    }
    let count = (outer * inner) as f64;
    let mut sum_g = vec![0.0f64; c];
    let mut sum_gx = vec![0.0f64; c];
    for b in 0..outer {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            for i in base..base + inner {
                let g = grad_out.data[i] as f64;
                sum_g[ch] += g;
                sum_gx[ch] += g * cache.x_hat.data[i] as f64;
            }
        }
    }
    let mut gi = vec![0.0f32; grad_out.len()];
    for b in 0..outer {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            let k = gamma[ch] as f64 * cache.inv_std[ch] as f64 / count;
            let (sg, sgx) = (sum_g[ch], sum_gx[ch]);
            for i in base..base + inner {
                let g = grad_out.data[i] as f64;
                let xh = cache.x_hat.data[i] as f64;
                gi[i] = (k * (count * g - sg - xh * sgx)) as f32;
            }
        }
    }
    Ok((
        DenseTensor::new(grad_out.shape.clone(), gi)?,
        sum_gx.into_iter().map(|v| v as f32).collect(),
        sum_g.into_iter().map(|v| v as f32).collect(),
    ))
}

/// `input · weights + bias` for `input: [batch, n_in]`, `weights: [n_in, n_out]`.
pub fn dense_forward(
    input: &DenseTensor,
    weights: &DenseTensor,
    bias: Option<&[f32]>,
) -> Result<DenseTensor> {
    input.expect_rank(2, "dense input")?;
    weights.expect_rank(2, "dense weights")?;
    let (n, n_in) = (input.shape[0], input.shape[1]);
    let (w_in, n_out) = (weights.shape[0], weights.shape[1]);
    if w_in != n_in {
        return Err(Error::dim(format!(
            "dense weights expect {w_in} inputs, got {n_in}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != n_out {
            return Err(Error::dim(format!(
                "bias has {} entries for {n_out} outputs",
                b.len()
            )));
        }
    }
    let mut out = vec![0.0f32; n * n_out];
    for i in 0..n {
        let y = &mut out[i * n_out..(i + 1) * n_out];
        if let Some(b) = bias {
            y.copy_from_slice(b);
        }
        for (k, &x) in input.data[i * n_in..(i + 1) * n_in].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wr = &weights.data[k * n_out..(k + 1) * n_out];
            for (yv, &w) in y.iter_mut().zip(wr) {
                *yv += x * w;
            }
        }
    }
    DenseTensor::new(vec![n, n_out], out)
}

/// `(grad_input, grad_weights, grad_bias)` for [`dense_forward`].
pub fn dense_backward(
    grad_out: &DenseTensor,
    input: &DenseTensor,
    weights: &DenseTensor,
) -> Result<(DenseTensor, DenseTensor, Vec<f32>)> {
    input.expect_rank(2, "dense input")?;
    weights.expect_rank(2, "dense weights")?;
    let (n, n_in) = (input.shape[0], input.shape[1]);
    let n_out = weights.shape[1];
    if weights.shape[0] != n_in || grad_out.shape != [n, n_out] {
        return Err(Error::dim("dense backward shapes are inconsistent"));
    }
    let mut gi = vec![0.0f32; n * n_in];
    let mut gw = vec![0.0f32; n_in * n_out];
    let mut gb = vec![0.0f32; n_out];
    for i in 0..n {
        let g = &grad_out.data[i * n_out..(i + 1) * n_out];
        for (b, &v) in gb.iter_mut().zip(g) {
            *b += v;
        }
        let x = &input.data[i * n_in..(i + 1) * n_in];
        for k in 0..n_in {
            let wr = &weights.data[k * n_out..(k + 1) * n_out];
            gi[i * n_in + k] = wr.iter().zip(g).map(|(a, b)| a * b).sum();
            if x[k] != 0.0 {
                let gr = &mut gw[k * n_out..(k + 1) * n_out];
                for (gv, &v) in gr.iter_mut().zip(g) {
                    *gv += x[k] * v;
                }
            }
        }
    }
    Ok((
        DenseTensor::new(vec![n, n_in], gi)?,
        DenseTensor::new(vec![n_in, n_out], gw)?,
        gb,
    ))
}

/// Row-wise softmax of `[batch, classes]` logits, stabilized by the row max.
pub fn softmax(logits: &DenseTensor) -> Result<DenseTensor> {
    logits.expect_rank(2, "logits")?;
    let g = logits.shape[1];
    let mut out = vec![0.0f32; logits.len()];
    for (row, dst) in logits.data.chunks(g.max(1)).zip(out.chunks_mut(g.max(1))) {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = ((v as f64 - m).exp() / z) as f32;
        }
    }
    DenseTensor::new(logits.shape.clone(), out)
}

/// Mean cross-entropy of `labels` under softmax(`logits`), with its gradient
/// `(softmax − onehot) / batch`.
pub fn softmax_cross_entropy(logits: &DenseTensor, labels: &[usize]) -> Result<(f64, DenseTensor)> {
    logits.expect_rank(2, "logits")?;
    let (n, g) = (logits.shape[0], logits.shape[1]);
    if labels.len() != n {
        return Err(Error::dim(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::dim("cross-entropy on an empty batch"));
    }
    let mut grad = vec![0.0f32; n * g];
    let mut loss = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= g {
            return Err(Error::param(format!("label {y} outside [0, {g})")));
        }
        let row = &logits.data[i * g..(i + 1) * g];
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
        let log_z = z.ln() + m;
        loss += log_z - row[y] as f64;
        for (j, &v) in row.iter().enumerate() {
            let p = (v as f64 - log_z).exp();
            let t = if j == y { 1.0 } else { 0.0 };
            grad[i * g + j] = ((p - t) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, DenseTensor::new(vec![n, g], grad)?))
}
