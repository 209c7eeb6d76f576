//! Keep probabilities and masks for a three-branch layout. The probability of
//! a reduced branch is the mean magnitude of its ternary last-conv weights.
//!
//! cargo run --release --example fusion_masks

use ternary_har::fusion::{Branch, FusionSpec};
use ternary_har::model::{Network, NetworkConfig};

fn main() -> ternary_har::Result<()> {
    let branches = vec![
        Branch::new("hand", 0..4),
        Branch::new("back", 4..8),
        Branch::new("ankle", 8..12),
    ];
    for (name, spec) in [
        ("periodic", FusionSpec::periodic(branches.clone())?),
        ("sporadic", FusionSpec::sporadic(branches.clone())?),
    ] {
        let net = Network::new(NetworkConfig::new(64, 4, spec.clone()), 0)?;
        let w = net.inference_fusion(9)?;
        println!("{name}:");
        for (b, (mask, p)) in spec.branches.iter().zip(w.masks.iter().zip(&w.keep_probability)) {
            let kept = mask.iter().filter(|&&m| m).count();
            println!("  {:<6} keep {:.3}, {kept}/{} features kept", b.name, p, mask.len());
        }
    }
    Ok(())
}
