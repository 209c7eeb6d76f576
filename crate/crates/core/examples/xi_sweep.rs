//! Final validation F1 of two dynamic-fusion presets across shift thresholds,
//! written as one CSV row per preset.
//!
//! cargo run --release --example xi_sweep

use ternary_har::cli::{RunConfig, Strategy, xi_sweep};

fn main() -> ternary_har::Result<()> {
    let cfg = RunConfig { epochs: 4, batch: 32, windows_per_class: 20, ..RunConfig::default() };
    let strategies = vec![Strategy::parse("periodic", &cfg)?, Strategy::parse("sporadic", &cfg)?];
    let table = xi_sweep(&cfg, &[2.6, 2.8, 3.0], &strategies)?;
    print!("{}", table.to_csv());
    Ok(())
}
