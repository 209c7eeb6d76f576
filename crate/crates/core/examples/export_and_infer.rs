//! Train briefly, write the packed model file, read it back and classify
//! windows with popcount kernels only.
//!
//! cargo run --release --example export_and_infer

use ternary_har::data::{SynthSpec, synth_dataset};
use ternary_har::fusion::{Branch, FusionSpec};
use ternary_har::model::{NetworkConfig, PackedModel, TrainConfig, gather_windows, train};

fn main() -> ternary_har::Result<()> {
    let ds = synth_dataset(&SynthSpec::three_branch(4, 64, 30, 2))?;
    let (tr, va) = ds.split(0.75, 1);
    let branches: Vec<Branch> = ds.spans.iter().map(|s| Branch::new(s.name.clone(), s.range.clone())).collect();
    let cfg = TrainConfig { epochs: 5, batch: 32, ..TrainConfig::default() };
    let state = train(NetworkConfig::new(64, 4, FusionSpec::periodic(branches)?), &tr, &va, cfg)?;

    let path = std::env::temp_dir().join("ternary_har_example.dftn");
    let model = PackedModel::from_network(&state.network)?;
    model.save(&path)?;
    let loaded = PackedModel::load(&path)?;
    println!(
        "{} bytes on disk for {} weights ({} bytes as f32)",
        std::fs::metadata(&path)?.len(),
        loaded.weight_count(),
        loaded.dense_weight_bytes()
    );

    let fusion = loaded.fusion_weights(0)?;
    let out = loaded.infer(&gather_windows(&va, &[0, 1, 2, 3, 4])?, &fusion)?;
    for (i, p) in out.predictions.iter().enumerate() {
        println!("window {i}: label {}, predicted {p}", va.labels[i]);
    }
    println!("validation weighted F1: {:.4}", loaded.weighted_f1(&va, 0, 64)?);
    std::fs::remove_file(&path)?;
    Ok(())
}
