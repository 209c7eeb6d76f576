//! Packed run-time model: popcount layers, folded batch-norm thresholds and the
//! DFTN file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "DFTN" | version u16 | layer_count u16
//! window_t u32 | channels u32 | classes u32 | fusion u8 | rounding u8 | branches u8
//!   per branch: name_len u8 | name | start u32 | end u32 | reduced u8
//! per layer: kind u8 | k u8 | rank u8 | dims u32.. | alpha f64 | sign u64.. | value u64..
//!   conv (kind 1):   stack u8 | stride u32 | pool u32 | thresholds
//!   hidden (kind 2): thresholds
//!   output (kind 3): bias f32 per class
//! thresholds: (upper f64, lower f64) per channel, then gamma sign i8 per channel
//! ```

use std::fs;
use std::path::Path;

use super::{Network, add_bias, stack_input};
use crate::bitpack::{
    PackedRows, QuantBNThresholds, TernaryTensor, conv1d_packed_prepared, dense_packed_prepared,
    pack_ternary, quantize_bn_apply, words_for,
};
use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::fusion::{Branch, BranchWeights, FusionMode, FusionSpec, FusionWeights, apply_fusion, sample_fusion_weights};
use crate::metrics::weighted_f1;
use crate::quantize::{QuantConfig, Rounding};
use crate::tensor::{DenseTensor, conv1d_forward, maxpool1d, softmax};

pub const MAGIC: &[u8; 4] = b"DFTN";
pub const FORMAT_VERSION: u16 = 1;

const KIND_CONV: u8 = 1;
const KIND_HIDDEN: u8 = 2;
const KIND_OUTPUT: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PackedConv {
    /// `[filters, in_channels, kernel]`
    pub kernel: TernaryTensor,
    pub stride: usize,
    pub pool: usize,
    pub thresholds: QuantBNThresholds,
    rows: PackedRows,
    dense: DenseTensor,
}

impl PackedConv {
    pub fn new(kernel: TernaryTensor, stride: usize, pool: usize, thresholds: QuantBNThresholds) -> Result<Self> {
        if kernel.shape().len() != 3 || thresholds.channels() != kernel.shape()[0] {
            return Err(Error::format("conv kernel and thresholds disagree on filter count"));
        }
        if stride == 0 || pool == 0 {
            return Err(Error::format("conv stride and pool must be positive"));
        }
        let rows = PackedRows::conv_kernel(&kernel)?;
        let dense = kernel.unpack();
        Ok(Self {
            kernel,
            stride,
            pool,
            thresholds,
            rows,
            dense,
        })
    }

    fn taps(&self) -> usize {
        self.kernel.shape()[2]
    }

    /// Real-valued input (first layer): dense conv with the ternary kernel.
    fn forward_real(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let s = conv1d_forward(x, &self.dense, self.stride)?.scale(self.kernel.alpha as f32);
        self.finish(&s)
    }

    fn forward_packed(&self, x: &TernaryTensor) -> Result<DenseTensor> {
        let s = conv1d_packed_prepared(x, &self.rows, self.taps(), self.stride)?;
        self.finish(&s)
    }

    fn finish(&self, s: &DenseTensor) -> Result<DenseTensor> {
        let (pooled, _) = maxpool1d(s, self.pool)?;
        quantize_bn_apply(&pooled, &self.thresholds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub logits: DenseTensor,
    pub probabilities: DenseTensor,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    pub window_t: usize,
    pub classes: usize,
    pub fusion: FusionSpec,
    pub rounding: Rounding,
    pub stacks: Vec<Vec<PackedConv>>,
    /// `[units, n_in]`
    pub hidden: TernaryTensor,
    pub hidden_thresholds: QuantBNThresholds,
    /// `[classes, units]`
    pub output: TernaryTensor,
    pub bias: Vec<f32>,
    hidden_rows: PackedRows,
    output_rows: PackedRows,
}

fn transpose(t: &DenseTensor) -> Result<DenseTensor> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    DenseTensor::new(vec![c, r], out)
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn fold_bn(bn: &crate::tensor::BatchNormState, epsilon_a: f64, rounding: Rounding) -> Result<QuantBNThresholds> {
    QuantBNThresholds::fold(
        &to_f64(&bn.gamma),
        &to_f64(&bn.beta),
        &to_f64(&bn.running_mean),
        &to_f64(&bn.running_sigma()),
        epsilon_a,
        rounding,
    )
}

fn rounding_tag(r: Rounding) -> u8 {
    match r {
        Rounding::HalfAwayFromZero => 0,
        Rounding::HalfToEven => 1,
    }
}

fn rounding_from_tag(t: u8) -> Result<Rounding> {
    match t {
        0 => Ok(Rounding::HalfAwayFromZero),
        1 => Ok(Rounding::HalfToEven),
        t => Err(Error::format(format!("unknown rounding tag {t}"))),
    }
}

impl PackedModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        window_t: usize,
        classes: usize,
        fusion: FusionSpec,
        rounding: Rounding,
        stacks: Vec<Vec<PackedConv>>,
        hidden: TernaryTensor,
        hidden_thresholds: QuantBNThresholds,
        output: TernaryTensor,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if stacks.is_empty() || stacks.iter().any(|s| s.is_empty()) {
            return Err(Error::format("model has no conv layers"));
        }
        if stacks.len() != fusion.stacks().len() {
            return Err(Error::format(format!(
                "{} conv stacks for a {} fusion layout of {}",
                stacks.len(),
                fusion.mode,
                fusion.stacks().len()
            )));
        }
        fusion.validate(fusion.total_channels())?;
        if hidden.shape().len() != 2 || output.shape().len() != 2 {
            return Err(Error::format("dense layers must have rank 2"));
        }
        let units = hidden.shape()[0];
        if hidden_thresholds.channels() != units || output.shape() != [classes, units] || bias.len() != classes {
            return Err(Error::format("dense layer shapes are inconsistent"));
        }
        let model = Self {
            window_t,
            classes,
            fusion,
            rounding,
            hidden_rows: PackedRows::from_tensor(&hidden, hidden.shape()[1])?,
            output_rows: PackedRows::from_tensor(&output, units)?,
            stacks,
            hidden,
            hidden_thresholds,
            output,
            bias,
        };
        let d: usize = model.stack_feature_dims()?.iter().sum();
        if d != model.hidden.shape()[1] {
            return Err(Error::format(format!(
                "hidden layer takes {} inputs but the stacks produce {d}",
                model.hidden.shape()[1]
            )));
        }
        Ok(model)
    }

    /// Quantizes every layer once and folds batch norm into thresholds.
    pub fn from_network(net: &Network) -> Result<Self> {
        let cfg = &net.config.quant;
        let rounding = cfg.rounding;
        let mut stacks = Vec::with_capacity(net.stacks.len());
        for stack in &net.stacks {
            let mut layers = Vec::with_capacity(stack.len());
            for l in stack {
                let q = l.quantize(cfg)?;
                layers.push(PackedConv::new(
                    pack_ternary(&q.ternary, q.alpha)?,
                    l.stride,
                    l.pool,
                    fold_bn(&l.bn, l.epsilon_a, rounding)?,
                )?);
            }
            stacks.push(layers);
        }
        let qh = super::QuantizedWeights::from_shadow(&net.hidden.weights, cfg)?;
        let qo = super::QuantizedWeights::from_shadow(&net.output.weights, cfg)?;
        Self::new(
            net.config.window_t,
            net.config.classes,
            net.config.fusion.clone(),
            rounding,
            stacks,
            pack_ternary(&transpose(&qh.ternary)?, qh.alpha)?,
            fold_bn(&net.hidden.bn, net.hidden.epsilon_a, rounding)?,
            pack_ternary(&transpose(&qo.ternary)?, qo.alpha)?,
            net.output.bias.clone(),
        )
    }

    pub fn channels(&self) -> usize {
        self.fusion.total_channels()
    }

    pub fn stack_feature_dims(&self) -> Result<Vec<usize>> {
        let mut dims = Vec::new();
        for (stack, range) in self.stacks.iter().zip(self.fusion.stacks()) {
            let mut t = self.window_t;
            let mut c_in = 1;
            for l in stack {
                let (f, c, kh) = (l.kernel.shape()[0], l.kernel.shape()[1], l.taps());
                if c != c_in || t < kh {
                    return Err(Error::format("conv stack shapes are inconsistent"));
                }
                t = ((t - kh) / l.stride + 1) / l.pool;
                c_in = f;
            }
            if t == 0 {
                return Err(Error::format("conv stack shrinks the window to nothing"));
            }
            dims.push(range.len() * c_in * t);
        }
        Ok(dims)
    }

    /// Bernoulli masks drawn once per run from the φ seed and the stored
    /// last-conv ternary weights.
    pub fn fusion_weights(&self, phi_seed: u64) -> Result<FusionWeights> {
        let t: Vec<DenseTensor> = self.stacks.iter().map(|s| s.last().unwrap().kernel.unpack()).collect();
        let conv3: Vec<BranchWeights<'_>> = t.iter().map(BranchWeights::Quantized).collect();
        let cfg = QuantConfig {
            rounding: self.rounding,
            ..QuantConfig::default()
        };
        sample_fusion_weights(&self.fusion, &conv3, &self.stack_feature_dims()?, &cfg, phi_seed)
    }

    pub fn infer(&self, windows: &DenseTensor, fusion: &FusionWeights) -> Result<Inference> {
        let want = [self.channels(), self.window_t];
        if windows.rank() != 3 || windows.shape()[1..] != want {
            return Err(Error::config(format!(
                "windows shaped {:?} do not match the model's [batch, {}, {}]",
                windows.shape(),
                want[0],
                want[1]
            )));
        }
        let batch = windows.shape()[0];
        if batch == 0 {
            return Err(Error::config("empty batch"));
        }
        let mut features = Vec::with_capacity(self.stacks.len());
        for (stack, range) in self.stacks.iter().zip(self.fusion.stacks()) {
            let x = stack_input(windows, range)?;
            let mut y = stack[0].forward_real(&x)?;
            for l in &stack[1..] {
                y = l.forward_packed(&pack_ternary(&y, 1.0)?)?;
            }
            let d = y.len() / batch;
            features.push(y.reshape(&[batch, d])?);
        }
        let fused = pack_ternary(&apply_fusion(&features, fusion)?, 1.0)?;
        let z = dense_packed_prepared(&fused, &self.hidden_rows)?;
        let h = pack_ternary(&quantize_bn_apply(&z, &self.hidden_thresholds)?, 1.0)?;
        let logits = add_bias(dense_packed_prepared(&h, &self.output_rows)?, &self.bias);
        let probabilities = softmax(&logits)?;
        let predictions = argmax_rows(&logits);
        Ok(Inference {
            logits,
            probabilities,
            predictions,
        })
    }

    /// Predictions for every window of `ds`, processed `batch` at a time.
    pub fn predict_dataset(&self, ds: &WindowDataset, phi_seed: u64, batch: usize) -> Result<Vec<usize>> {
        let fusion = self.fusion_weights(phi_seed)?;
        let idx: Vec<usize> = (0..ds.len()).collect();
        let mut out = Vec::with_capacity(ds.len());
        for chunk in idx.chunks(batch.max(1)) {
            let x = super::train::gather_windows(ds, chunk)?;
            out.extend(self.infer(&x, &fusion)?.predictions);
        }
        Ok(out)
    }

    pub fn weighted_f1(&self, ds: &WindowDataset, phi_seed: u64, batch: usize) -> Result<f64> {
        let pred = self.predict_dataset(ds, phi_seed, batch)?;
        weighted_f1(&pred, &ds.labels, self.classes)
    }

    pub fn layer_count(&self) -> usize {
        self.stacks.iter().map(|s| s.len()).sum::<usize>() + 2
    }

    /// Number of ternary weights across all layers.
    pub fn weight_count(&self) -> usize {
        self.stacks.iter().flatten().map(|l| l.kernel.len()).sum::<usize>() + self.hidden.len() + self.output.len()
    }

    /// Size of the same weights stored as 32-bit reals.
    pub fn dense_weight_bytes(&self) -> usize {
        4 * self.weight_count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(FORMAT_VERSION);
        w.u16(self.layer_count() as u16);
        w.u32(self.window_t as u32);
        w.u32(self.channels() as u32);
        w.u32(self.classes as u32);
        w.u8(self.fusion.mode.tag());
        w.u8(rounding_tag(self.rounding));
        w.u8(self.fusion.branches.len() as u8);
        for b in &self.fusion.branches {
            w.u8(b.name.len() as u8);
            w.bytes(b.name.as_bytes());
            w.u32(b.channels.start as u32);
            w.u32(b.channels.end as u32);
            w.u8(b.reduced as u8);
        }
        for (s, stack) in self.stacks.iter().enumerate() {
            for l in stack {
                w.tensor(KIND_CONV, &l.kernel);
                w.u8(s as u8);
                w.u32(l.stride as u32);
                w.u32(l.pool as u32);
                w.thresholds(&l.thresholds);
            }
        }
        w.tensor(KIND_HIDDEN, &self.hidden);
        w.thresholds(&self.hidden_thresholds);
        w.tensor(KIND_OUTPUT, &self.output);
        for &b in &self.bias {
            w.f32(b);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("not a DFTN file (bad magic)"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported DFTN version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let layers = r.u16()? as usize;
        if layers < 3 {
            return Err(Error::format(format!("model has {layers} layers; at least 3 required")));
        }
        let window_t = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let mode = FusionMode::from_tag(r.u8()?)?;
        let rounding = rounding_from_tag(r.u8()?)?;
        let n_branches = r.u8()? as usize;
        let mut branches = Vec::with_capacity(n_branches);
        for _ in 0..n_branches {
            let len = r.u8()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format("branch name is not UTF-8"))?;
            let start = r.u32()? as usize;
            let end = r.u32()? as usize;
            let mut b = Branch::new(name, start..end);
            b.reduced = r.u8()? != 0;
            branches.push(b);
        }
        let fusion = FusionSpec::new(mode, branches);
        if fusion.total_channels() != channels {
            return Err(Error::format("branch spans do not cover the channel count"));
        }
        let mut stacks: Vec<Vec<PackedConv>> = vec![Vec::new(); fusion.stacks().len()];
        for _ in 0..layers - 2 {
            let kernel = r.tensor(KIND_CONV, 3)?;
            let s = r.u8()? as usize;
            let stride = r.u32()? as usize;
            let pool = r.u32()? as usize;
            let th = r.thresholds(kernel.shape()[0], rounding)?;
            let stack = stacks
                .get_mut(s)
                .ok_or_else(|| Error::format(format!("conv layer refers to missing stack {s}")))?;
            stack.push(PackedConv::new(kernel, stride, pool, th)?);
        }
        let hidden = r.tensor(KIND_HIDDEN, 2)?;
        let hidden_thresholds = r.thresholds(hidden.shape()[0], rounding)?;
        let output = r.tensor(KIND_OUTPUT, 2)?;
        let mut bias = Vec::with_capacity(classes);
        for _ in 0..output.shape()[0] {
            bias.push(r.f32()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Self::new(window_t, classes, fusion, rounding, stacks, hidden, hidden_thresholds, output, bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Index of the largest logit in each row; ties go to the lower class.
pub fn argmax_rows(logits: &DenseTensor) -> Vec<usize> {
    let g = logits.shape()[1].max(1);
    logits
        .data()
        .chunks(g)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    fn tensor(&mut self, kind: u8, t: &TernaryTensor) {
        self.u8(kind);
        self.u8(TernaryTensor::K as u8);
        self.u8(t.shape().len() as u8);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        self.f64(t.alpha);
        for &x in t.sign_plane() {
            self.u64(x);
        }
        for &x in t.value_plane() {
            self.u64(x);
        }
    }

    fn thresholds(&mut self, th: &QuantBNThresholds) {
        for c in 0..th.channels() {
            self.f64(th.upper[c]);
            self.f64(th.lower[c]);
        }
        for &s in &th.gamma_sign {
            self.u8(s as u8);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(format!("file truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.arr()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr()?))
    }

    fn tensor(&mut self, kind: u8, expect_rank: usize) -> Result<TernaryTensor> {
        let got = self.u8()?;
        if got != kind {
            return Err(Error::format(format!("expected layer kind {kind}, found {got}")));
        }
        let k = self.u8()?;
        if k as u32 != TernaryTensor::K {
            return Err(Error::format(format!("unsupported bit-width {k}")));
        }
        let rank = self.u8()? as usize;
        if rank != expect_rank {
            return Err(Error::format(format!(
                "layer kind {kind} has rank {rank}, expected {expect_rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let alpha = self.f64()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::format("tensor size overflows"))?;
        let words = words_for(n);
        if words.saturating_mul(16) > self.buf.len() - self.pos {
            return Err(Error::format("file truncated inside a bit plane"));
        }
        let mut sign = Vec::with_capacity(words);
        for _ in 0..words {
            sign.push(self.u64()?);
        }
        let mut value = Vec::with_capacity(words);
        for _ in 0..words {
            value.push(self.u64()?);
        }
        TernaryTensor::from_planes(shape, sign, value, alpha)
    }

    fn thresholds(&mut self, channels: usize, rounding: Rounding) -> Result<QuantBNThresholds> {
        let mut upper = Vec::with_capacity(channels);
        let mut lower = Vec::with_capacity(channels);
        for _ in 0..channels {
            upper.push(self.f64()?);
            lower.push(self.f64()?);
        }
        let mut gamma_sign = Vec::with_capacity(channels);
        for _ in 0..channels {
            let s = self.u8()? as i8;
            if s != 1 && s != -1 {
                return Err(Error::format(format!("bad gamma sign {s}")));
            }
            gamma_sign.push(s);
        }
        Ok(QuantBNThresholds {
            upper,
            lower,
            gamma_sign,
            rounding,
        })
    }
}
