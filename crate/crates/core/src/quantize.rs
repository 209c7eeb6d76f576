//! ε-Q linear quantization and its calibrated uses for weights and activations.
//!
//! `Q_k(x, ε) = clip(φ(k)·round(x·ε/φ(k)), −1+φ(k), 1−φ(k))` with grid step
//! `φ(k) = 2^(1−k)`. For `k = 2` every output lies in `{−0.5, 0, 0.5}`.
//!
//! Weights are quantized with a scale derived from their mean magnitude and a
//! shift threshold ξ, then rescaled by a least-squares `α`. Activations use a
//! per-layer scale that the training loop refreshes once per epoch. Both
//! quantizers are treated as (scaled) identity in the backward pass.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Tie-break rule used by every `round` in the quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    HalfToEven,
}

impl Rounding {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Rounding::HalfAwayFromZero => v.round(),
            Rounding::HalfToEven => v.round_ties_even(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rounding::HalfAwayFromZero => "half-away",
            Rounding::HalfToEven => "half-even",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "half-away" | "half_away_from_zero" => Ok(Rounding::HalfAwayFromZero),
            "half-even" | "half_to_even" => Ok(Rounding::HalfToEven),
            other => Err(Error::param(format!("unknown rounding rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantConfig {
    pub k_w: u32,
    pub k_a: u32,
    /// Shift threshold ξ; the weight zero-threshold is `ξ·mean|W|/4`.
    pub xi: f64,
    pub rounding: Rounding,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            k_w: 2,
            k_a: 2,
            xi: 2.8,
            rounding: Rounding::HalfAwayFromZero,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        check_bits(self.k_w)?;
        check_bits(self.k_a)?;
        if !(self.xi.is_finite() && self.xi > 0.0) {
            return Err(Error::param(format!("xi must be positive, got {}", self.xi)));
        }
        Ok(())
    }
}

fn check_bits(k: u32) -> Result<()> {
    if !(2..=16).contains(&k) {
        return Err(Error::param(format!("bit-width must be in [2, 16], got {k}")));
    }
    Ok(())
}

/// Grid step `φ(k) = 2^(1−k)`.
pub fn grid_step(k: u32) -> f64 {
    (2.0f64).powi(1 - k as i32)
}

#[inline]
fn quantize_value(x: f64, epsilon: f64, step: f64, rounding: Rounding) -> f64 {
    let lim = 1.0 - step;
    (step * rounding.round(x * epsilon / step)).clamp(-lim, lim)
}

/// Scalar ε-Q quantizer.
pub fn quantize_scalar(x: f64, epsilon: f64, k: u32, rounding: Rounding) -> Result<f64> {
    check_bits(k)?;
    check_scale(epsilon)?;
    Ok(quantize_value(x, epsilon, grid_step(k), rounding))
}

fn check_scale(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::param(format!("scale must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Elementwise ε-Q quantizer; output values lie on the `φ(k)` grid.
pub fn quantize_linear(
    x: &DenseTensor,
    epsilon: f64,
    k: u32,
    rounding: Rounding,
) -> Result<DenseTensor> {
    check_bits(k)?;
    check_scale(epsilon)?;
    let step = grid_step(k);
    Ok(x.map(|v| quantize_value(v as f64, epsilon, step, rounding) as f32))
}

/// Weight scale `ε_w = n / (ξ·Σ|W|)`.
pub fn weight_scale(w: &DenseTensor, xi: f64) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::degenerate("weight tensor is empty"));
    }
    if !(xi.is_finite() && xi > 0.0) {
        return Err(Error::param(format!("xi must be positive, got {xi}")));
    }
    let l1: f64 = w.data().iter().map(|&v| (v as f64).abs()).sum();
    if l1 == 0.0 {
        return Err(Error::degenerate("all-zero weights have no scale"));
    }
    Ok(w.len() as f64 / (xi * l1))
}

/// Least-squares scale for a fixed ternary pattern: `α = ⟨W,T⟩ / ⟨T,T⟩`.
pub fn solve_alpha(w: &DenseTensor, t: &DenseTensor) -> Result<f64> {
    if w.shape() != t.shape() {
        return Err(Error::dim(format!(
            "weights {:?} and pattern {:?} differ in shape",
            w.shape(),
            t.shape()
        )));
    }
    let (mut wt, mut tt) = (0.0f64, 0.0f64);
    for (&a, &b) in w.data().iter().zip(t.data()) {
        wt += a as f64 * b as f64;
        tt += b as f64 * b as f64;
    }
    if tt == 0.0 {
        return Err(Error::degenerate("ternary pattern is all zero; alpha undefined"));
    }
    Ok(wt / tt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantResult {
    pub ternary: DenseTensor,
    pub alpha: f64,
    pub epsilon_w: f64,
    /// Indices of the nonzero entries of `ternary`.
    pub support: Vec<usize>,
    /// `‖W − αT‖`
    pub reconstruction_error: f64,
}

/// `T = Q_{k_w}(W, ε_w)` followed by the least-squares `α`.
pub fn quantize_weights(w: &DenseTensor, cfg: &QuantConfig) -> Result<QuantResult> {
    let epsilon_w = weight_scale(w, cfg.xi)?;
    let ternary = quantize_linear(w, epsilon_w, cfg.k_w, cfg.rounding)?;
    let support: Vec<usize> = ternary
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i)
        .collect();
    let alpha = if support.is_empty() {
        log::warn!("xi = {} zeroes every weight; falling back to alpha = 0", cfg.xi);
        0.0
    } else {
        solve_alpha(w, &ternary)?
    };
    let reconstruction_error = w
        .data()
        .iter()
        .zip(ternary.data())
        .map(|(&a, &b)| {
            let d = a as f64 - alpha * b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt();
    Ok(QuantResult {
        ternary,
        alpha,
        epsilon_w,
        support,
        reconstruction_error,
    })
}

/// `ε_a = min(1, 2^−round(τ))` for a given magnitude ratio τ.
pub fn activation_scale_from_ratio(tau: f64) -> f64 {
    (2.0f64).powf(-tau.round()).min(1.0)
}

/// Activation scale of a layer from its full-precision weights, with
/// `τ = mean|w| / max|w|`.
pub fn activation_scale(w_layer: &DenseTensor) -> Result<f64> {
    if w_layer.is_empty() {
        return Err(Error::degenerate("layer has no weights"));
    }
    let mean = w_layer.data().iter().map(|&v| (v as f64).abs()).sum::<f64>() / w_layer.len() as f64;
    let max = w_layer
        .data()
        .iter()
        .map(|&v| (v as f64).abs())
        .fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::degenerate("all-zero layer has no activation scale"));
    }
    Ok(activation_scale_from_ratio(mean / max))
}

pub fn quantize_activations(
    a: &DenseTensor,
    cfg: &QuantConfig,
    epsilon_a: f64,
) -> Result<DenseTensor> {
    quantize_linear(a, epsilon_a, cfg.k_a, cfg.rounding)
}

/// Straight-through gradient for quantized weights: `∂L/∂W = α·∂L/∂T`.
pub fn ste_weight_grad(grad_t: &DenseTensor, alpha: f64) -> DenseTensor {
    grad_t.scale(alpha as f32)
}

/// Straight-through gradient for quantized activations: passes where `|A| ≤ 0.5`.
pub fn ste_activation_grad(grad_aq: &DenseTensor, a: &DenseTensor) -> Result<DenseTensor> {
    if grad_aq.shape() != a.shape() {
        return Err(Error::dim("activation gradient and activation differ in shape"));
    }
    let data = grad_aq
        .data()
        .iter()
        .zip(a.data())
        .map(|(&g, &v)| if v.abs() <= 0.5 { g } else { 0.0 })
        .collect();
    DenseTensor::new(a.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Reconstruction error on the support versus `‖W_γ‖²·(1 − 1/|γ|)`.
pub fn reconstruction_bound_check(w: &DenseTensor, result: &QuantResult) -> Result<BoundCheck> {
    if result.support.is_empty() {
        return Err(Error::degenerate("empty support"));
    }
    if w.shape() != result.ternary.shape() {
        return Err(Error::dim("weights and quantization result differ in shape"));
    }
    let (mut lhs, mut energy) = (0.0f64, 0.0f64);
    for &i in &result.support {
        let wi = w.data()[i] as f64;
        let d = wi - result.alpha * result.ternary.data()[i] as f64;
        lhs += d * d;
        energy += wi * wi;
    }
    let rhs = energy * (1.0 - 1.0 / result.support.len() as f64);
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}
