//! Two ternary vectors, packed into sign/value bit planes and multiplied with
//! popcounts, give the same dot product as the float loop.
//!
//! cargo run --release --example popcount_dot

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ternary_har::bitpack::{dot_packed, pack_ternary};
use ternary_har::tensor::DenseTensor;

fn random_ternary(rng: &mut ChaCha8Rng, n: usize) -> DenseTensor {
    let vals = [-0.5f32, 0.0, 0.5];
    DenseTensor::from_vec((0..n).map(|_| vals[rng.random_range(0..3)]).collect())
}

fn main() -> ternary_har::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [10, 64, 1000, 1890] {
        let a = random_ternary(&mut rng, n);
        let b = random_ternary(&mut rng, n);
        let dense: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x * y) as f64).sum();
        let pa = pack_ternary(&a, 1.0)?;
        let pb = pack_ternary(&b, 1.0)?;
        let packed = dot_packed(&pa, &pb)?;
        println!(
            "n={n:5}: float {dense:8.2}  popcount {packed:8.2}  ({} bytes packed vs {} as f32)",
            pa.packed_bytes(),
            4 * n
        );
    }
    Ok(())
}
