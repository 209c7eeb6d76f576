//! Load a labeled CSV stream with a schema, fill gaps, standardize and cut
//! it into windows.
//!
//! cargo run --release --example csv_ingest

use std::fmt::Write as _;

use ternary_har::data::{ChannelStats, CsvSchema, load_csv, segment_windows};

fn main() -> ternary_har::Result<()> {
    let dir = std::env::temp_dir().join("ternary_har_csv_example");
    std::fs::create_dir_all(&dir)?;
    let mut text = String::new();
    for t in 0..300 {
        let label = (t / 100) % 3;
        let a = (t as f32 * 0.2).sin() * (label + 1) as f32;
        // A dropped sample on the second channel every 37 rows.
        let b = if t % 37 == 0 { String::from("NaN") } else { format!("{}", t as f32 * 0.01) };
        let _ = writeln!(text, "{a},{b},{},{label}", -a);
    }
    let csv = dir.join("stream.csv");
    std::fs::write(&csv, text)?;
    let schema = CsvSchema::parse("channels = 3\nsample_rate = 30\nbranch.wrist = 0-1\nbranch.hip = 2-2\n")?;

    let mut stream = load_csv(&csv, &schema)?;
    let stats = ChannelStats::fit(&stream)?;
    stats.apply(&mut stream)?;
    let windows = segment_windows(&stream, &schema.spans, 32, 8)?;
    println!(
        "{} samples -> {} windows of {}x{}, {} classes, proportions {:?}",
        stream.len(),
        windows.len(),
        windows.channels,
        windows.window_t,
        windows.classes,
        windows.class_proportions()
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
