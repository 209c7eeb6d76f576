//! Ternarize one conv layer's weights and look at what the quantizer chose.
//!
//! cargo run --release --example quantize_weights

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ternary_har::quantize::{
    QuantConfig, activation_scale, quantize_weights, reconstruction_bound_check,
};
use ternary_har::tensor::DenseTensor;

fn main() -> ternary_har::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0f32, 0.05).unwrap();
    let shape = vec![40, 50, 10];
    let data = (0..40 * 50 * 10).map(|_| normal.sample(&mut rng)).collect();
    let w = DenseTensor::new(shape, data)?;

    for xi in [2.6, 2.8, 3.0] {
        let cfg = QuantConfig { xi, ..QuantConfig::default() };
        let q = quantize_weights(&w, &cfg)?;
        let bound = reconstruction_bound_check(&w, &q)?;
        println!(
            "xi {xi:?}: eps_w {:.2}, alpha {:.4}, nonzero {:.1}%, error {:.4} <= {:.4}: {}",
            q.epsilon_w,
            q.alpha,
            100.0 * q.support.len() as f64 / w.len() as f64,
            bound.lhs,
            bound.rhs,
            bound.holds
        );
    }
    println!("activation scale for this layer: {}", activation_scale(&w)?);
    Ok(())
}
