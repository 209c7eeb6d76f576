//! Sensor-window ternary CNN: configuration, layers, train-time forward/backward.
//!
//! Every stack runs `Conv → MaxPool → BatchNorm → ActivationQuantize` three times
//! over each sensor channel separately (weights shared across the stack's
//! channels). Stack features meet at the fusion boundary, then pass through a
//! ternary hidden layer with batch norm and a ternary output layer with a real
//! bias.

mod packed;
mod train;

pub use packed::{Inference, PackedConv, PackedModel, FORMAT_VERSION, MAGIC, argmax_rows};
pub use train::{gather_windows, 
    AdaDelta, AdaDeltaConfig, EpochMetrics, TrainConfig, TrainState, metrics_csv, train,
};

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fusion::{BranchWeights, FusionSpec, FusionWeights, apply_fusion, fusion_backward, sample_fusion_weights};
use crate::quantize::{
    QuantConfig, activation_scale, quantize_activations, quantize_weights, ste_activation_grad,
    ste_weight_grad,
};
use crate::tensor::{
    BatchNormCache, BatchNormState, DenseTensor, batchnorm_backward, batchnorm_forward,
    conv1d_backward_input, conv1d_backward_kernel, conv1d_forward, dense_backward, dense_forward,
    maxpool1d, maxpool1d_backward,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
    pub pool: usize,
}

impl ConvSpec {
    pub const fn new(kernel: usize, filters: usize, stride: usize, pool: usize) -> Self {
        Self {
            kernel,
            filters,
            stride,
            pool,
        }
    }
}

/// Default conv stack: 11-tap x 50, 10-tap x 40, 6-tap x 30 with pools 2, 3, 1.
pub const DEFAULT_CONVS: [ConvSpec; 3] = [
    ConvSpec::new(11, 50, 1, 2),
    ConvSpec::new(10, 40, 1, 3),
    ConvSpec::new(6, 30, 1, 1),
];

pub const DEFAULT_HIDDEN: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub window_t: usize,
    pub classes: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub fusion: FusionSpec,
    pub quant: QuantConfig,
}

/// Weight count of one learnable layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub weights: usize,
}

impl NetworkConfig {
    pub fn new(window_t: usize, classes: usize, fusion: FusionSpec) -> Self {
        Self {
            window_t,
            classes,
            convs: DEFAULT_CONVS.to_vec(),
            hidden: DEFAULT_HIDDEN,
            fusion,
            quant: QuantConfig::default(),
        }
    }

    pub fn channels(&self) -> usize {
        self.fusion.total_channels()
    }

    /// Time length after each conv + pool stage.
    pub fn time_lengths(&self) -> Result<Vec<usize>> {
        let mut t = self.window_t;
        let mut out = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            if c.kernel == 0 || c.stride == 0 || c.pool == 0 || c.filters == 0 {
                return Err(Error::config(format!("conv layer {} has a zero size", i + 1)));
            }
            if t < c.kernel {
                return Err(Error::config(format!(
                    "conv layer {} needs {} samples but gets {t}",
                    i + 1,
                    c.kernel
                )));
            }
            t = ((t - c.kernel) / c.stride + 1) / c.pool;
            if t == 0 {
                return Err(Error::config(format!(
                    "window of {} samples shrinks to nothing after layer {}",
                    self.window_t,
                    i + 1
                )));
            }
            out.push(t);
        }
        Ok(out)
    }

    pub fn stacks(&self) -> Vec<Range<usize>> {
        self.fusion.stacks()
    }

    /// Feature length each stack hands to the fusion step.
    pub fn stack_feature_dims(&self) -> Result<Vec<usize>> {
        let t_last = *self.time_lengths()?.last().ok_or_else(|| Error::config("no conv layers"))?;
        let f_last = self.convs.last().map_or(0, |c| c.filters);
        Ok(self.stacks().iter().map(|r| r.len() * f_last * t_last).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() {
            return Err(Error::config("network needs at least one conv layer"));
        }
        if self.classes < 2 {
            return Err(Error::config("network needs at least two classes"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden layer must have units"));
        }
        self.quant.validate()?;
        if self.quant.k_w != 2 || self.quant.k_a != 2 {
            return Err(Error::config(
                "packed layers store 2-bit values; k_w and k_a must both be 2",
            ));
        }
        self.fusion.validate(self.channels())?;
        self.time_lengths()?;
        Ok(())
    }

    /// Per-layer weight counts; conv layers are listed per stack.
    pub fn param_counts(&self) -> Result<Vec<LayerCount>> {
        let dims = self.stack_feature_dims()?;
        let mut out = Vec::new();
        for s in 0..self.stacks().len() {
            let mut c_in = 1;
            for (l, c) in self.convs.iter().enumerate() {
                out.push(LayerCount {
                    name: format!("stack{s}.conv{}", l + 1),
                    weights: c.filters * c_in * c.kernel,
                });
                c_in = c.filters;
            }
        }
        let d: usize = dims.iter().sum();
        out.push(LayerCount {
            name: "hidden".into(),
            weights: d * self.hidden,
        });
        out.push(LayerCount {
            name: "output".into(),
            weights: self.hidden * self.classes,
        });
        Ok(out)
    }

    pub fn total_weights(&self) -> Result<usize> {
        Ok(self.param_counts()?.iter().map(|c| c.weights).sum())
    }
}

/// Ternary pattern plus its scale, produced afresh from shadow weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub ternary: DenseTensor,
    pub alpha: f64,
}

impl QuantizedWeights {
    pub fn from_shadow(w: &DenseTensor, cfg: &QuantConfig) -> Result<Self> {
        match quantize_weights(w, cfg) {
            Ok(q) => Ok(Self {
                ternary: q.ternary,
                alpha: q.alpha,
            }),
            Err(Error::Degenerate(_)) => {
                log::warn!("all-zero weights; layer output is zero");
                Ok(Self {
                    ternary: DenseTensor::zeros(w.shape()),
                    alpha: 0.0,
                })
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[filters, in_channels, kernel]`
    pub weights: DenseTensor,
    pub bn: BatchNormState,
    pub stride: usize,
    pub pool: usize,
    pub epsilon_a: f64,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    input: DenseTensor,
    q: QuantizedWeights,
    conv_shape: Vec<usize>,
    argmax: Vec<usize>,
    bn: BatchNormCache,
    /// Batch-norm output before activation quantization.
    pub pre_quant: DenseTensor,
    quantized: bool,
    /// Batch-norm state after this pass (running statistics updated in training).
    pub bn_after: BatchNormState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: DenseTensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub input: Option<DenseTensor>,
}

impl ConvLayer {
    pub fn new(weights: DenseTensor, stride: usize, pool: usize) -> Result<Self> {
        if weights.rank() != 3 {
            return Err(Error::dim("conv weights must be [filters, in_channels, kernel]"));
        }
        let filters = weights.shape()[0];
        Ok(Self {
            weights,
            bn: BatchNormState::new(filters),
            stride,
            pool,
            epsilon_a: 1.0,
        })
    }

    pub fn quantize(&self, cfg: &QuantConfig) -> Result<QuantizedWeights> {
        QuantizedWeights::from_shadow(&self.weights, cfg)
    }

    /// `s = α·conv(A, T)`, max-pool, batch norm, then (optionally) `Q_{k_a}`.
    pub fn forward(
        &self,
        input: &DenseTensor,
        q: &QuantizedWeights,
        cfg: &QuantConfig,
        training: bool,
        quantize_output: bool,
    ) -> Result<(DenseTensor, ConvCache)> {
        let s = conv1d_forward(input, &q.ternary, self.stride)?.scale(q.alpha as f32);
        let conv_shape = s.shape().to_vec();
        let (pooled, argmax) = maxpool1d(&s, self.pool)?;
        let mut bn_after = self.bn.clone();
        let (a, bn) = batchnorm_forward(&pooled, &mut bn_after, training)?;
        let out = if quantize_output {
            quantize_activations(&a, cfg, self.epsilon_a)?
        } else {
            a.clone()
        };
        Ok((
            out,
            ConvCache {
                input: input.clone(),
                q: q.clone(),
                conv_shape,
                argmax,
                bn,
                pre_quant: a,
                quantized: quantize_output,
                bn_after,
            },
        ))
    }

    /// Straight-through backward. The weight gradient is `α·∂L/∂T`.
    pub fn backward(&self, cache: &ConvCache, grad_out: &DenseTensor, input_grad: bool) -> Result<ConvGrads> {
        let g_a = if cache.quantized {
            ste_activation_grad(grad_out, &cache.pre_quant)?
        } else {
            grad_out.clone()
        };
        let (g_pooled, gamma, beta) = batchnorm_backward(&g_a, &cache.bn, &self.bn.gamma)?;
        let g_s = maxpool1d_backward(&g_pooled, &cache.argmax, &cache.conv_shape)?;
        let alpha = cache.q.alpha;
        let g_t = conv1d_backward_kernel(&g_s, &cache.input, self.weights.shape(), self.stride)?
            .scale(alpha as f32);
        let input = if input_grad {
            Some(
                conv1d_backward_input(&g_s, cache.input.shape(), &cache.q.ternary, self.stride)?
                    .scale(alpha as f32),
            )
        } else {
            None
        };
        Ok(ConvGrads {
            weights: ste_weight_grad(&g_t, alpha),
            gamma,
            beta,
            input,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// `[n_in, n_out]`
    pub weights: DenseTensor,
    pub bn: BatchNormState,
    pub epsilon_a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    /// `[n_in, classes]`
    pub weights: DenseTensor,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct HiddenCache {
    input: DenseTensor,
    q: QuantizedWeights,
    bn: BatchNormCache,
    pre_quant: DenseTensor,
    pub bn_after: BatchNormState,
}

#[derive(Debug, Clone)]
pub struct OutputCache {
    input: DenseTensor,
    q: QuantizedWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: DenseTensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub bias: Vec<f32>,
}

/// `α·(X·T)` computed so that the rounding matches the packed kernel.
fn ternary_dense(input: &DenseTensor, q: &QuantizedWeights) -> Result<DenseTensor> {
    Ok(dense_forward(input, &q.ternary, None)?.scale(q.alpha as f32))
}

fn ternary_dense_backward(
    grad: &DenseTensor,
    input: &DenseTensor,
    q: &QuantizedWeights,
) -> Result<(DenseTensor, DenseTensor)> {
    let (gi, gt, _) = dense_backward(grad, input, &q.ternary)?;
    let a = q.alpha as f32;
    Ok((gi.scale(a), ste_weight_grad(&gt.scale(a), q.alpha)))
}

impl HiddenLayer {
    pub fn forward(
        &self,
        input: &DenseTensor,
        q: &QuantizedWeights,
        cfg: &QuantConfig,
        training: bool,
    ) -> Result<(DenseTensor, HiddenCache)> {
        let z = ternary_dense(input, q)?;
        let mut bn_after = self.bn.clone();
        let (a, bn) = batchnorm_forward(&z, &mut bn_after, training)?;
        let out = quantize_activations(&a, cfg, self.epsilon_a)?;
        Ok((
            out,
            HiddenCache {
                input: input.clone(),
                q: q.clone(),
                bn,
                pre_quant: a,
                bn_after,
            },
        ))
    }

    pub fn backward(&self, cache: &HiddenCache, grad_out: &DenseTensor) -> Result<(DenseTensor, DenseGrads)> {
        let g_a = ste_activation_grad(grad_out, &cache.pre_quant)?;
        let (g_z, gamma, beta) = batchnorm_backward(&g_a, &cache.bn, &self.bn.gamma)?;
        let (gi, gw) = ternary_dense_backward(&g_z, &cache.input, &cache.q)?;
        Ok((
            gi,
            DenseGrads {
                weights: gw,
                gamma,
                beta,
                bias: Vec::new(),
            },
        ))
    }
}

impl OutputLayer {
    pub fn forward(&self, input: &DenseTensor, q: &QuantizedWeights) -> Result<(DenseTensor, OutputCache)> {
        let logits = add_bias(ternary_dense(input, q)?, &self.bias);
        Ok((
            logits,
            OutputCache {
                input: input.clone(),
                q: q.clone(),
            },
        ))
    }

    pub fn backward(&self, cache: &OutputCache, grad_logits: &DenseTensor) -> Result<(DenseTensor, DenseGrads)> {
        let (gi, gw) = ternary_dense_backward(grad_logits, &cache.input, &cache.q)?;
        let g = self.bias.len();
        let mut bias = vec![0.0f32; g];
        for row in grad_logits.data().chunks(g) {
            for (b, &v) in bias.iter_mut().zip(row) {
                *b += v;
            }
        }
        Ok((
            gi,
            DenseGrads {
                weights: gw,
                gamma: Vec::new(),
                beta: Vec::new(),
                bias,
            },
        ))
    }
}

pub(crate) fn add_bias(mut x: DenseTensor, bias: &[f32]) -> DenseTensor {
    let g = bias.len();
    for row in x.data_mut().chunks_mut(g) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    x
}

/// Pulls one stack's channels out of `[batch, S, T]` windows and folds sensors
/// into the batch axis: `[batch·S_p, 1, T]`.
pub fn stack_input(windows: &DenseTensor, channels: Range<usize>) -> Result<DenseTensor> {
    if windows.rank() != 3 {
        return Err(Error::config("windows must be shaped [batch, channels, time]"));
    }
    let (n, s, t) = (windows.shape()[0], windows.shape()[1], windows.shape()[2]);
    if channels.end > s {
        return Err(Error::config(format!("channels {channels:?} exceed {s} inputs")));
    }
    let w = channels.len();
    let mut out = Vec::with_capacity(n * w * t);
    for b in 0..n {
        out.extend_from_slice(&windows.data()[(b * s + channels.start) * t..(b * s + channels.end) * t]);
    }
    DenseTensor::new(vec![n * w, 1, t], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub stacks: Vec<Vec<ConvLayer>>,
    pub hidden: HiddenLayer,
    pub output: OutputLayer,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub stacks: Vec<Vec<ConvCache>>,
    stack_shapes: Vec<Vec<usize>>,
    pub fusion: FusionWeights,
    pub hidden: HiddenCache,
    output: OutputCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub stacks: Vec<Vec<ConvGrads>>,
    pub hidden: DenseGrads,
    pub output: DenseGrads,
}

impl Gradients {
    /// Gradient slices in [`Network::params_mut`] order.
    pub fn flat(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for stack in &self.stacks {
            for g in stack {
                out.push(g.weights.data());
                out.push(&g.gamma);
                out.push(&g.beta);
            }
        }
        out.push(self.hidden.weights.data());
        out.push(&self.hidden.gamma);
        out.push(&self.hidden.beta);
        out.push(self.output.weights.data());
        out.push(&self.output.bias);
        out
    }
}

fn normal_tensor(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<DenseTensor> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt() as f32;
    let dist = Normal::new(0.0f32, std).map_err(|e| Error::param(e.to_string()))?;
    let n: usize = shape.iter().product();
    DenseTensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

impl Network {
    /// Seeded He-normal initialization; batch norm starts at `γ = 1, β = 0`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stacks = Vec::new();
        for _ in config.stacks() {
            let mut c_in = 1;
            let mut layers = Vec::new();
            for c in &config.convs {
                let w = normal_tensor(&[c.filters, c_in, c.kernel], c_in * c.kernel, &mut rng)?;
                layers.push(ConvLayer::new(w, c.stride, c.pool)?);
                c_in = c.filters;
            }
            stacks.push(layers);
        }
        let d: usize = config.stack_feature_dims()?.iter().sum();
        let hidden = HiddenLayer {
            weights: normal_tensor(&[d, config.hidden], d, &mut rng)?,
            bn: BatchNormState::new(config.hidden),
            epsilon_a: 1.0,
        };
        let output = OutputLayer {
            weights: normal_tensor(&[config.hidden, config.classes], config.hidden, &mut rng)?,
            bias: vec![0.0; config.classes],
        };
        Ok(Self {
            config,
            stacks,
            hidden,
            output,
        })
    }

    /// Every trainable parameter slice in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for stack in &mut self.stacks {
            for l in stack {
                out.push(l.weights.data_mut());
                out.push(&mut l.bn.gamma);
                out.push(&mut l.bn.beta);
            }
        }
        out.push(self.hidden.weights.data_mut());
        out.push(&mut self.hidden.bn.gamma);
        out.push(&mut self.hidden.bn.beta);
        out.push(self.output.weights.data_mut());
        out.push(&mut self.output.bias);
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for stack in &self.stacks {
            for l in stack {
                out.push(l.weights.len());
                out.push(l.bn.gamma.len());
                out.push(l.bn.beta.len());
            }
        }
        out.extend([
            self.hidden.weights.len(),
            self.hidden.bn.gamma.len(),
            self.hidden.bn.beta.len(),
            self.output.weights.len(),
            self.output.bias.len(),
        ]);
        out
    }

    /// Last conv layer of each stack, quantized; these drive fusion at run time.
    pub fn last_conv_ternary(&self) -> Result<Vec<DenseTensor>> {
        self.stacks
            .iter()
            .map(|s| Ok(s.last().ok_or_else(|| Error::config("empty stack"))?.quantize(&self.config.quant)?.ternary))
            .collect()
    }

    /// Train-time masks: last-conv shadow weights are quantized then sampled.
    pub fn train_fusion(&self, seed: u64) -> Result<FusionWeights> {
        let w: Vec<&DenseTensor> = self.stacks.iter().map(|s| &s.last().unwrap().weights).collect();
        let conv3: Vec<BranchWeights<'_>> = w.iter().map(|w| BranchWeights::FullPrecision(w)).collect();
        sample_fusion_weights(
            &self.config.fusion,
            &conv3,
            &self.config.stack_feature_dims()?,
            &self.config.quant,
            seed,
        )
    }

    /// Run-time masks drawn once from the φ seed.
    pub fn inference_fusion(&self, phi_seed: u64) -> Result<FusionWeights> {
        let t = self.last_conv_ternary()?;
        let conv3: Vec<BranchWeights<'_>> = t.iter().map(BranchWeights::Quantized).collect();
        sample_fusion_weights(
            &self.config.fusion,
            &conv3,
            &self.config.stack_feature_dims()?,
            &self.config.quant,
            phi_seed,
        )
    }

    fn check_windows(&self, windows: &DenseTensor) -> Result<()> {
        let want = [self.config.channels(), self.config.window_t];
        if windows.rank() != 3 || windows.shape()[1..] != want {
            return Err(Error::config(format!(
                "windows shaped {:?} do not match the network's [batch, {}, {}]",
                windows.shape(),
                want[0],
                want[1]
            )));
        }
        if windows.shape()[0] == 0 {
            return Err(Error::config("empty batch"));
        }
        Ok(())
    }

    /// Quantized forward pass. Training mode normalizes with batch statistics;
    /// the updated running statistics are returned in the cache, not applied.
    pub fn forward(
        &self,
        windows: &DenseTensor,
        fusion: &FusionWeights,
        training: bool,
    ) -> Result<(DenseTensor, ForwardCache)> {
        self.check_windows(windows)?;
        let cfg = &self.config.quant;
        let batch = windows.shape()[0];
        let mut features = Vec::with_capacity(self.stacks.len());
        let mut caches = Vec::with_capacity(self.stacks.len());
        let mut stack_shapes = Vec::with_capacity(self.stacks.len());
        for (stack, range) in self.stacks.iter().zip(self.config.stacks()) {
            let mut x = stack_input(windows, range)?;
            let mut sc = Vec::with_capacity(stack.len());
            for layer in stack {
                let q = layer.quantize(cfg)?;
                let (y, c) = layer.forward(&x, &q, cfg, training, true)?;
                sc.push(c);
                x = y;
            }
            stack_shapes.push(x.shape().to_vec());
            let d = x.len() / batch;
            features.push(x.reshape(&[batch, d])?);
            caches.push(sc);
        }
        let fused = apply_fusion(&features, fusion)?;
        let qh = QuantizedWeights::from_shadow(&self.hidden.weights, cfg)?;
        let (h, hidden) = self.hidden.forward(&fused, &qh, cfg, training)?;
        let qo = QuantizedWeights::from_shadow(&self.output.weights, cfg)?;
        let (logits, output) = self.output.forward(&h, &qo)?;
        Ok((
            logits,
            ForwardCache {
                stacks: caches,
                stack_shapes,
                fusion: fusion.clone(),
                hidden,
                output,
            },
        ))
    }

    /// Eval-mode logits.
    pub fn predict_logits(&self, windows: &DenseTensor, fusion: &FusionWeights) -> Result<DenseTensor> {
        Ok(self.forward(windows, fusion, false)?.0)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_logits: &DenseTensor) -> Result<Gradients> {
        let (g_h, output) = self.output.backward(&cache.output, grad_logits)?;
        let (g_fused, hidden) = self.hidden.backward(&cache.hidden, &g_h)?;
        let parts = fusion_backward(&g_fused, &cache.fusion)?;
        let mut stacks = Vec::with_capacity(self.stacks.len());
        for (((stack, sc), part), shape) in self
            .stacks
            .iter()
            .zip(&cache.stacks)
            .zip(parts)
            .zip(&cache.stack_shapes)
        {
            let mut g = part.reshape(shape)?;
            let mut grads = Vec::with_capacity(stack.len());
            for (i, (layer, c)) in stack.iter().zip(sc).enumerate().rev() {
                let mut lg = layer.backward(c, &g, i > 0)?;
                if let Some(gi) = lg.input.take() {
                    g = gi;
                }
                grads.push(lg);
            }
            grads.reverse();
            stacks.push(grads);
        }
        Ok(Gradients {
            stacks,
            hidden,
            output,
        })
    }

    /// Installs the running statistics recorded by a training forward pass.
    pub fn commit_batchnorm(&mut self, cache: &ForwardCache) {
        for (stack, sc) in self.stacks.iter_mut().zip(&cache.stacks) {
            for (l, c) in stack.iter_mut().zip(sc) {
                l.bn = c.bn_after.clone();
            }
        }
        self.hidden.bn = cache.hidden.bn_after.clone();
    }

    /// Recomputes each layer's activation scale from its shadow weights.
    pub fn update_activation_scales(&mut self) {
        let scale = |w: &DenseTensor, old: f64| activation_scale(w).unwrap_or(old);
        for stack in &mut self.stacks {
            for l in stack {
                l.epsilon_a = scale(&l.weights, l.epsilon_a);
            }
        }
        self.hidden.epsilon_a = scale(&self.hidden.weights, self.hidden.epsilon_a);
    }

    pub fn activation_scales(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.stacks.iter().flatten().map(|l| l.epsilon_a).collect();
        out.push(self.hidden.epsilon_a);
        out
    }
}
