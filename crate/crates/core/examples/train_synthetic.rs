//! Train the ternary network on generated windows where the back branch carries
//! no class signal, and compare fusion strategies.
//!
//! cargo run --release --example train_synthetic

use ternary_har::data::{SynthSpec, synth_dataset};
use ternary_har::fusion::{Branch, FusionMode, FusionSpec};
use ternary_har::model::{NetworkConfig, TrainConfig, train};

fn main() -> ternary_har::Result<()> {
    let ds = synth_dataset(&SynthSpec::three_branch(4, 64, 40, 11))?;
    let (tr, va) = ds.split(0.75, 5);
    let branches: Vec<Branch> = ds.spans.iter().map(|s| Branch::new(s.name.clone(), s.range.clone())).collect();
    let cfg = TrainConfig { epochs: 10, batch: 32, seed: 3, phi_seed: 9, ..TrainConfig::default() };
    for (name, spec) in [
        ("early", FusionSpec::new(FusionMode::Early, branches.clone())),
        ("late", FusionSpec::new(FusionMode::Late, branches.clone())),
        ("dynamic", FusionSpec::periodic(branches.clone())?),
    ] {
        let state = train(NetworkConfig::new(64, 4, spec), &tr, &va, cfg.clone())?;
        let last = state.history.last().unwrap();
        println!("{name:<8} loss {:.4}  validation weighted F1 {:.4}", last.train_loss, last.val_weighted_f1);
    }
    Ok(())
}
