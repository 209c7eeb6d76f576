//! Bit-plane storage for 2-bit ternary tensors and popcount kernels over it.
//!
//! A value in `{−0.5, 0, 0.5}` is stored as two bits: a *value* bit (nonzero)
//! and a *sign* bit (positive). Element `i` lives at bit `i % 64` of word `i / 64`.
//! Zero elements always carry sign bit 0 and padding bits are always 0, so two
//! packings of the same values are identical.
//!
//! For two packed vectors the inner product is
//! `(popcount(¬(sa⊕sb) ∧ va ∧ vb) − popcount((sa⊕sb) ∧ va ∧ vb)) · φ(2)²`,
//! then scaled by both tensors' `α`.

use crate::error::{Error, Result};
use crate::quantize::Rounding;
use crate::tensor::DenseTensor;

/// `φ(2)² = 0.25`, the product of two unit grid steps.
pub const GRID_PRODUCT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct TernaryTensor {
    shape: Vec<usize>,
    sign: Vec<u64>,
    value: Vec<u64>,
    pub alpha: f64,
}

#[inline]
pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl TernaryTensor {
    pub const K: u32 = 2;

    /// Rebuilds a tensor from raw planes, checking the canonical-form invariants.
    pub fn from_planes(shape: Vec<usize>, sign: Vec<u64>, value: Vec<u64>, alpha: f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        let w = words_for(n);
        if sign.len() != w || value.len() != w {
            return Err(Error::format(format!(
                "planes of {} / {} words for {n} elements (expected {w})",
                sign.len(),
                value.len()
            )));
        }
        if sign.iter().zip(&value).any(|(s, v)| s & !v != 0) {
            return Err(Error::format("sign bit set on a zero element"));
        }
        if n % 64 != 0 && w > 0 {
            let pad = !0u64 << (n % 64);
            if (value[w - 1] | sign[w - 1]) & pad != 0 {
                return Err(Error::format("nonzero padding bits"));
            }
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::format(format!("alpha must be finite and nonnegative, got {alpha}")));
        }
        Ok(Self {
            shape,
            sign,
            value,
            alpha,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sign_plane(&self) -> &[u64] {
        &self.sign
    }

    pub fn value_plane(&self) -> &[u64] {
        &self.value
    }

    pub fn nonzeros(&self) -> usize {
        self.value.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Grid value of element `i` (without `α`).
    pub fn get(&self, i: usize) -> f32 {
        let (w, b) = (i / 64, i % 64);
        if (self.value[w] >> b) & 1 == 0 {
            0.0
        } else if (self.sign[w] >> b) & 1 == 1 {
            0.5
        } else {
            -0.5
        }
    }

    /// Grid values as a dense tensor (without `α`).
    pub fn unpack(&self) -> DenseTensor {
        let data = (0..self.len()).map(|i| self.get(i)).collect();
        DenseTensor::new(self.shape.clone(), data).expect("shape matches element count")
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::dim(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Bytes of the packed representation: both planes plus one `f64` α.
    pub fn packed_bytes(&self) -> usize {
        2 * 8 * self.sign.len() + 8
    }
}

/// Packs a tensor whose values are exactly `−0.5`, `0` or `0.5`.
pub fn pack_ternary(t: &DenseTensor, alpha: f64) -> Result<TernaryTensor> {
    let n = t.len();
    let w = words_for(n);
    let mut sign = vec![0u64; w];
    let mut value = vec![0u64; w];
    for (i, &v) in t.data().iter().enumerate() {
        let bit = 1u64 << (i % 64);
        if v == 0.5 {
            sign[i / 64] |= bit;
            value[i / 64] |= bit;
        } else if v == -0.5 {
            value[i / 64] |= bit;
        } else if v != 0.0 {
            return Err(Error::Precision(format!(
                "value {v} at index {i} is not on the ternary grid"
            )));
        }
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::param(format!("alpha must be finite and nonnegative, got {alpha}")));
    }
    Ok(TernaryTensor {
        shape: t.shape().to_vec(),
        sign,
        value,
        alpha,
    })
}

/// 64 bits starting at an arbitrary bit offset; bits past the end read as 0.
#[inline]
fn load_word(words: &[u64], bit: usize) -> u64 {
    let (w, o) = (bit / 64, bit % 64);
    if w >= words.len() {
        return 0;
    }
    let lo = words[w] >> o;
    if o == 0 || w + 1 >= words.len() {
        lo
    } else {
        lo | (words[w + 1] << (64 - o))
    }
}

/// Signed match count `Σ sign(a_i)·sign(b_i)` over aligned word slices.
#[inline]
pub fn popcount_dot(a_sign: &[u64], a_val: &[u64], b_sign: &[u64], b_val: &[u64]) -> i64 {
    let mut agree = 0u32;
    let mut differ = 0u32;
    for i in 0..a_val.len() {
        let both = a_val[i] & b_val[i];
        let x = a_sign[i] ^ b_sign[i];
        agree += (!x & both).count_ones();
        differ += (x & both).count_ones();
    }
    agree as i64 - differ as i64
}

/// Same as [`popcount_dot`] with `a` read from an unaligned bit offset. `b` must
/// be zero past its logical length so that stray bits of `a` are masked out.
#[inline]
fn popcount_dot_at(a_sign: &[u64], a_val: &[u64], offset: usize, b_sign: &[u64], b_val: &[u64]) -> i64 {
    let mut agree = 0u32;
    let mut differ = 0u32;
    for i in 0..b_val.len() {
        let bit = offset + 64 * i;
        let both = load_word(a_val, bit) & b_val[i];
        let x = load_word(a_sign, bit) ^ b_sign[i];
        agree += (!x & both).count_ones();
        differ += (x & both).count_ones();
    }
    agree as i64 - differ as i64
}

/// Inner product of two packed vectors of equal length, `α`s included.
pub fn dot_packed(a: &TernaryTensor, b: &TernaryTensor) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "packed dot of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = popcount_dot(&a.sign, &a.value, &b.sign, &b.value);
    Ok((n as f64 * GRID_PRODUCT) * (a.alpha * b.alpha))
}

/// Word-aligned rows of ternary bits; each row starts on a fresh word.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedRows {
    rows: usize,
    row_bits: usize,
    words_per_row: usize,
    sign: Vec<u64>,
    value: Vec<u64>,
    pub alpha: f64,
}

impl PackedRows {
    fn with_layout(rows: usize, row_bits: usize, alpha: f64) -> Self {
        let words_per_row = words_for(row_bits);
        Self {
            rows,
            row_bits,
            words_per_row,
            sign: vec![0; rows * words_per_row],
            value: vec![0; rows * words_per_row],
            alpha,
        }
    }

    #[inline]
    fn set(&mut self, row: usize, bit: usize, sign: bool) {
        let idx = row * self.words_per_row + bit / 64;
        let mask = 1u64 << (bit % 64);
        self.value[idx] |= mask;
        if sign {
            self.sign[idx] |= mask;
        }
    }

    #[inline]
    fn row(&self, r: usize) -> (&[u64], &[u64]) {
        let s = r * self.words_per_row;
        let e = s + self.words_per_row;
        (&self.sign[s..e], &self.value[s..e])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row_bits(&self) -> usize {
        self.row_bits
    }

    /// Splits a row-major tensor into rows of `row_bits` elements.
    pub fn from_tensor(t: &TernaryTensor, row_bits: usize) -> Result<Self> {
        if row_bits == 0 || t.len() % row_bits != 0 {
            return Err(Error::dim(format!(
                "{} elements do not split into rows of {row_bits}",
                t.len()
            )));
        }
        let rows = t.len() / row_bits;
        let mut out = Self::with_layout(rows, row_bits, t.alpha);
        for r in 0..rows {
            for b in 0..row_bits {
                let i = r * row_bits + b;
                if (t.value[i / 64] >> (i % 64)) & 1 == 1 {
                    out.set(r, b, (t.sign[i / 64] >> (i % 64)) & 1 == 1);
                }
            }
        }
        Ok(out)
    }

    /// Reorders a `[c_out, c_in, kh]` kernel into one row per output channel with
    /// bits laid out tap-major (`j·c_in + c`), matching [`time_major`] input.
    pub fn conv_kernel(kernel: &TernaryTensor) -> Result<Self> {
        if kernel.shape.len() != 3 {
            return Err(Error::dim("packed conv kernel must have rank 3"));
        }
        let (c_out, c_in, kh) = (kernel.shape[0], kernel.shape[1], kernel.shape[2]);
        let mut out = Self::with_layout(c_out, kh * c_in, kernel.alpha);
        for o in 0..c_out {
            for c in 0..c_in {
                for j in 0..kh {
                    let i = (o * c_in + c) * kh + j;
                    if (kernel.value[i / 64] >> (i % 64)) & 1 == 1 {
                        out.set(o, j * c_in + c, (kernel.sign[i / 64] >> (i % 64)) & 1 == 1);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Re-lays one batch item of a `[batch, c, t]` tensor as time-major bits
/// (`t·c + channel`) so that every conv window is a contiguous bit range.
fn time_major(input: &TernaryTensor, item: usize, sign: &mut Vec<u64>, value: &mut Vec<u64>) {
    let (c, t) = (input.shape[1], input.shape[2]);
    let w = words_for(c * t);
    sign.clear();
    sign.resize(w, 0);
    value.clear();
    value.resize(w, 0);
    let base = item * c * t;
    for ch in 0..c {
        for s in 0..t {
            let i = base + ch * t + s;
            if (input.value[i / 64] >> (i % 64)) & 1 == 1 {
                let dst = s * c + ch;
                value[dst / 64] |= 1 << (dst % 64);
                if (input.sign[i / 64] >> (i % 64)) & 1 == 1 {
                    sign[dst / 64] |= 1 << (dst % 64);
                }
            }
        }
    }
}

/// Popcount convolution with a kernel already prepared by [`PackedRows::conv_kernel`].
pub fn conv1d_packed_prepared(
    input: &TernaryTensor,
    kernel: &PackedRows,
    kh: usize,
    stride: usize,
) -> Result<DenseTensor> {
    if input.shape.len() != 3 {
        return Err(Error::dim("packed conv input must have rank 3"));
    }
    let (n, c, t) = (input.shape[0], input.shape[1], input.shape[2]);
    if kh == 0 || kernel.row_bits != kh * c {
        return Err(Error::dim(format!(
            "kernel rows of {} bits do not match {c} channels x {kh} taps",
            kernel.row_bits
        )));
    }
    if stride == 0 {
        return Err(Error::param("convolution stride must be positive"));
    }
    if t < kh {
        return Err(Error::dim(format!("time length {t} shorter than kernel height {kh}")));
    }
    let t_out = (t - kh) / stride + 1;
    let c_out = kernel.rows;
    let scale = (input.alpha * kernel.alpha) as f32;
    let mut out = vec![0.0f32; n * c_out * t_out];
    let (mut sign, mut value) = (Vec::new(), Vec::new());
    for b in 0..n {
        time_major(input, b, &mut sign, &mut value);
        for o in 0..c_out {
            let (ks, kv) = kernel.row(o);
            let y = &mut out[(b * c_out + o) * t_out..(b * c_out + o + 1) * t_out];
            for (i, yv) in y.iter_mut().enumerate() {
                let m = popcount_dot_at(&sign, &value, i * stride * c, ks, kv);
                *yv = (m as f32 * GRID_PRODUCT as f32) * scale;
            }
        }
    }
    DenseTensor::new(vec![n, c_out, t_out], out)
}

/// Valid 1D convolution of packed `[batch, c_in, t]` activations with a packed
/// `[c_out, c_in, kh]` kernel. Output is dense and carries both `α`s.
pub fn conv1d_packed(input: &TernaryTensor, kernel: &TernaryTensor, stride: usize) -> Result<DenseTensor> {
    if input.shape.len() != 3 || kernel.shape.len() != 3 {
        return Err(Error::dim("packed conv needs rank-3 input and kernel"));
    }
    if input.shape[1] != kernel.shape[1] {
        return Err(Error::dim(format!(
            "kernel expects {} input channels, input has {}",
            kernel.shape[1], input.shape[1]
        )));
    }
    let prepared = PackedRows::conv_kernel(kernel)?;
    conv1d_packed_prepared(input, &prepared, kernel.shape[2], stride)
}

/// Packed dense layer with weights already split into one row per output.
pub fn dense_packed_prepared(input: &TernaryTensor, weights: &PackedRows) -> Result<DenseTensor> {
    if input.shape.len() != 2 {
        return Err(Error::dim("packed dense input must have rank 2"));
    }
    let (n, n_in) = (input.shape[0], input.shape[1]);
    if weights.row_bits != n_in {
        return Err(Error::dim(format!(
            "weight rows of {} bits for {n_in} inputs",
            weights.row_bits
        )));
    }
    let scale = (input.alpha * weights.alpha) as f32;
    let n_out = weights.rows;
    let mut out = vec![0.0f32; n * n_out];
    for b in 0..n {
        for o in 0..n_out {
            let (ws, wv) = weights.row(o);
            let m = popcount_dot_at(&input.sign, &input.value, b * n_in, ws, wv);
            out[b * n_out + o] = (m as f32 * GRID_PRODUCT as f32) * scale;
        }
    }
    DenseTensor::new(vec![n, n_out], out)
}

/// Packed dense layer: `input: [batch, n_in]`, `weights: [n_out, n_in]` (one row
/// per output neuron).
pub fn dense_packed(input: &TernaryTensor, weights: &TernaryTensor) -> Result<DenseTensor> {
    if weights.shape.len() != 2 || input.shape.len() != 2 {
        return Err(Error::dim("packed dense needs rank-2 input and weights"));
    }
    if weights.shape[1] != input.shape[1] {
        return Err(Error::dim(format!(
            "weights expect {} inputs, got {}",
            weights.shape[1], input.shape[1]
        )));
    }
    let prepared = PackedRows::from_tensor(weights, weights.shape[1])?;
    dense_packed_prepared(input, &prepared)
}

/// Per-channel comparison thresholds equivalent to `Q₂(γ·x̂ + β, ε)`.
///
/// `upper = (1/(4ε) − β)/γ`, `lower = −(1/(4ε) + β)/γ`. For `γ > 0` the output is
/// `+0.5` above `upper` and `−0.5` below `lower`; for `γ < 0` both comparisons flip.
/// Whether the boundary itself belongs to the zero band follows the rounding rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantBNThresholds {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub gamma_sign: Vec<i8>,
    pub rounding: Rounding,
}

impl QuantBNThresholds {
    /// Thresholds on the normalized input `x̂`.
    pub fn new(gamma: &[f64], beta: &[f64], epsilon: f64, rounding: Rounding) -> Result<Self> {
        let ones = vec![1.0; gamma.len()];
        let zeros = vec![0.0; gamma.len()];
        Self::fold(gamma, beta, &zeros, &ones, epsilon, rounding)
    }

    /// Thresholds on the raw input `x`, with `x̂ = (x − mean)/sigma` folded in.
    pub fn fold(
        gamma: &[f64],
        beta: &[f64],
        mean: &[f64],
        sigma: &[f64],
        epsilon: f64,
        rounding: Rounding,
    ) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || mean.len() != c || sigma.len() != c {
            return Err(Error::dim("batch-norm parameter lengths differ"));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::param(format!("scale must be positive, got {epsilon}")));
        }
        let half_band = 1.0 / (4.0 * epsilon);
        let mut out = Self {
            upper: Vec::with_capacity(c),
            lower: Vec::with_capacity(c),
            gamma_sign: Vec::with_capacity(c),
            rounding,
        };
        for ch in 0..c {
            let g = gamma[ch];
            if g == 0.0 || !g.is_finite() {
                return Err(Error::degenerate(format!("channel {ch} has gamma = {g}")));
            }
            if !(sigma[ch] > 0.0) {
                return Err(Error::degenerate(format!("channel {ch} has sigma = {}", sigma[ch])));
            }
            let up = (half_band - beta[ch]) / g;
            let lo = -(half_band + beta[ch]) / g;
            out.upper.push(mean[ch] + sigma[ch] * up);
            out.lower.push(mean[ch] + sigma[ch] * lo);
            out.gamma_sign.push(if g > 0.0 { 1 } else { -1 });
        }
        Ok(out)
    }

    pub fn channels(&self) -> usize {
        self.upper.len()
    }

    #[inline]
    pub fn apply_value(&self, ch: usize, x: f64) -> f32 {
        let (up, lo) = (self.upper[ch], self.lower[ch]);
        let inclusive = self.rounding == Rounding::HalfAwayFromZero;
        let (pos, neg) = if self.gamma_sign[ch] > 0 {
            if inclusive {
                (x >= up, x <= lo)
            } else {
                (x > up, x < lo)
            }
        } else if inclusive {
            (x <= up, x >= lo)
        } else {
            (x < up, x > lo)
        };
        if pos {
            0.5
        } else if neg {
            -0.5
        } else {
            0.0
        }
    }
}

/// Ternarizes a `[batch, channels, ...]` tensor by threshold comparison.
pub fn quantize_bn_apply(x: &DenseTensor, thresholds: &QuantBNThresholds) -> Result<DenseTensor> {
    let shape = x.shape();
    let c = thresholds.channels();
    if shape.len() < 2 || shape[1] != c {
        return Err(Error::dim(format!(
            "thresholds for {c} channels cannot take shape {shape:?}"
        )));
    }
    let inner: usize = shape[2..].iter().product();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| thresholds.apply_value((i / inner.max(1)) % c, v as f64))
        .collect();
    DenseTensor::new(shape.to_vec(), data)
}
