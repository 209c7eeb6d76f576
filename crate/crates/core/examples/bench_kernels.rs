//! Dense versus popcount timing for the layers of the 63-channel network.
//!
//! cargo run --release --example bench_kernels

use ternary_har::bench::{reference_cases, reports_table, run_cases};

fn main() -> ternary_har::Result<()> {
    let reports = run_cases(&reference_cases(2, 18), 3, 0)?;
    print!("{}", reports_table(&reports));
    Ok(())
}
