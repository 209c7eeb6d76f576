//! Quick randomized consistency checks across the library, for `selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitpack::{QuantBNThresholds, dot_packed, pack_ternary, quantize_bn_apply};
use crate::error::Result;
use crate::fusion::{Branch, FusionSpec};
use crate::model::{Network, NetworkConfig, PackedModel};
use crate::quantize::{QuantConfig, Rounding, quantize_linear, quantize_weights};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> DenseTensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (rng.random::<f32>() - 0.5) * 2.0 * scale).collect();
    DenseTensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn grid_values(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let x = normal_tensor(rng, &[4096], 3.0);
    let q = quantize_linear(&x, 0.7, 2, Rounding::HalfAwayFromZero)?;
    let bad = q.data().iter().filter(|v| ![-0.5, 0.0, 0.5].contains(*v)).count();
    Ok((bad == 0, format!("{bad} values off the ternary grid")))
}

fn weight_quantizer(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let w = normal_tensor(rng, &[40, 50, 10], 0.1);
    let r = quantize_weights(&w, &QuantConfig::default())?;
    // α minimizes ||W − αT||², so no other scale of the same T does better.
    let err = |a: f64| -> f64 {
        w.data()
            .iter()
            .zip(r.ternary.data())
            .map(|(&x, &t)| (x as f64 - a * t as f64).powi(2))
            .sum()
    };
    let best = err(r.alpha);
    let ok = r.alpha > 0.0 && best <= err(r.alpha * 1.01) && best <= err(r.alpha * 0.99);
    Ok((ok, format!("alpha {:.5}, residual {best:.5}", r.alpha)))
}

fn popcount_dot(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for n in [1usize, 63, 64, 65, 1000] {
        let a = quantize_linear(&normal_tensor(rng, &[n], 2.0), 1.0, 2, Rounding::HalfAwayFromZero)?;
        let b = quantize_linear(&normal_tensor(rng, &[n], 2.0), 1.0, 2, Rounding::HalfAwayFromZero)?;
        let dense: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum();
        let packed = dot_packed(&pack_ternary(&a, 1.0)?, &pack_ternary(&b, 1.0)?)?;
        worst = worst.max((dense - packed).abs());
    }
    Ok((worst == 0.0, format!("max difference {worst}")))
}

fn pack_round_trip(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let t = quantize_linear(&normal_tensor(rng, &[7, 3, 11], 2.0), 1.0, 2, Rounding::HalfAwayFromZero)?;
    let back = pack_ternary(&t, 0.3)?.unpack();
    Ok((back == t, format!("{} elements", t.len())))
}

fn threshold_fold(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let c = 6;
    let gamma: Vec<f64> = (0..c).map(|i| if i % 2 == 0 { 0.8 } else { -1.3 }).collect();
    let beta: Vec<f64> = (0..c).map(|_| rng.random::<f64>() - 0.5).collect();
    let mean: Vec<f64> = (0..c).map(|_| rng.random::<f64>() - 0.5).collect();
    let sigma: Vec<f64> = (0..c).map(|_| 0.5 + rng.random::<f64>()).collect();
    let eps = 0.5;
    let th = QuantBNThresholds::fold(&gamma, &beta, &mean, &sigma, eps, Rounding::HalfAwayFromZero)?;
    let x = normal_tensor(rng, &[8, c, 16], 3.0);
    let fast = quantize_bn_apply(&x, &th)?;
    let mut mismatches = 0;
    for (i, &v) in x.data().iter().enumerate() {
        let ch = (i / 16) % c;
        let bn = gamma[ch] * (v as f64 - mean[ch]) / sigma[ch] + beta[ch];
        let q = crate::quantize::quantize_scalar(bn, eps, 2, Rounding::HalfAwayFromZero)? as f32;
        mismatches += usize::from(q != fast.data()[i]);
    }
    Ok((mismatches == 0, format!("{mismatches} of {} differ", x.len())))
}

fn small_network() -> Result<Network> {
    let spec = FusionSpec::new(
        crate::fusion::FusionMode::Dynamic,
        vec![Branch::new("a", 0..2), Branch::new("b", 2..4)],
    )
    .with_reduced(&["b"])?;
    let cfg = NetworkConfig {
        hidden: 32,
        ..NetworkConfig::new(64, 3, spec)
    };
    Network::new(cfg, 5)
}

fn model_round_trip() -> Result<(bool, String)> {
    let model = PackedModel::from_network(&small_network()?)?;
    let bytes = model.to_bytes();
    let back = PackedModel::from_bytes(&bytes)?;
    Ok((back == model && back.to_bytes() == bytes, format!("{} bytes", bytes.len())))
}

fn packed_matches_network(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let net = small_network()?;
    let model = PackedModel::from_network(&net)?;
    let x = normal_tensor(rng, &[16, 4, 64], 1.5);
    let fusion = net.inference_fusion(3)?;
    let dense = crate::model::argmax_rows(&net.predict_logits(&x, &fusion)?);
    let packed = model.infer(&x, &model.fusion_weights(3)?)?.predictions;
    let agree = dense.iter().zip(&packed).filter(|(a, b)| a == b).count();
    Ok((agree == dense.len(), format!("{agree}/{} predictions agree", dense.len())))
}

fn fusion_determinism() -> Result<(bool, String)> {
    let net = small_network()?;
    let a = net.inference_fusion(42)?;
    let b = net.inference_fusion(42)?;
    let p = a.keep_probability[1];
    Ok((a == b && (0.0..=1.0).contains(&p), format!("keep probability {p:.3}")))
}

/// Runs every check; errors count as failures.
pub fn run_all(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |name: &'static str, r: Result<(bool, String)>| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        out.push(Check { name, passed, detail });
    };
    record("ternary grid", grid_values(&mut rng));
    record("least-squares alpha", weight_quantizer(&mut rng));
    record("popcount dot product", popcount_dot(&mut rng));
    record("pack round trip", pack_round_trip(&mut rng));
    record("folded thresholds", threshold_fold(&mut rng));
    record("model file round trip", model_round_trip());
    record("packed vs dense inference", packed_matches_network(&mut rng));
    record("fusion masks reproducible", fusion_determinism());
    out
}
