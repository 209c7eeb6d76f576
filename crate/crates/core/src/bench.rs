//! Dense f32 versus popcount kernels on ternary operands.
//!
//! Every case checks that the two paths agree bit for bit before timing them.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitpack::{PackedRows, conv1d_packed_prepared, dense_packed_prepared, pack_ternary};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, conv1d_forward, dense_forward};

#[derive(Debug, Clone, PartialEq)]
pub enum BenchCase {
    Conv {
        name: String,
        batch: usize,
        channels: usize,
        length: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        name: String,
        batch: usize,
        inputs: usize,
        outputs: usize,
    },
}

impl BenchCase {
    pub fn name(&self) -> &str {
        match self {
            BenchCase::Conv { name, .. } | BenchCase::Dense { name, .. } => name,
        }
    }

    fn batch(&self) -> usize {
        match self {
            BenchCase::Conv { batch, .. } | BenchCase::Dense { batch, .. } => *batch,
        }
    }
}

/// The ternary layers of the 63-channel, 64-sample, single-stack network:
/// second and third convolutions (one row per sensor) and both dense layers.
pub fn reference_cases(batch: usize, classes: usize) -> Vec<BenchCase> {
    let rows = batch * 63;
    vec![
        BenchCase::Conv {
            name: "conv2 50->40 k10".into(),
            batch: rows,
            channels: 50,
            length: 27,
            filters: 40,
            kernel: 10,
            stride: 1,
        },
        BenchCase::Conv {
            name: "conv3 40->30 k6".into(),
            batch: rows,
            channels: 40,
            length: 6,
            filters: 30,
            kernel: 6,
            stride: 1,
        },
        BenchCase::Dense {
            name: "hidden 1890->1000".into(),
            batch,
            inputs: 1890,
            outputs: 1000,
        },
        BenchCase::Dense {
            name: format!("output 1000->{classes}"),
            batch,
            inputs: 1000,
            outputs: classes,
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub name: String,
    pub dense: Duration,
    pub packed: Duration,
    /// Weight storage as f32 over packed storage.
    pub dense_weight_bytes: usize,
    pub packed_weight_bytes: usize,
    pub exact: bool,
    pub max_abs_diff: f32,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.dense.as_secs_f64() / self.packed.as_secs_f64().max(1e-12)
    }

    pub fn memory_ratio(&self) -> f64 {
        self.dense_weight_bytes as f64 / self.packed_weight_bytes as f64
    }
}

fn ternary(rng: &mut ChaCha8Rng, shape: &[usize], zero_fraction: f64) -> DenseTensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.random::<f64>() < zero_fraction {
                0.0
            } else if rng.random::<bool>() {
                0.5
            } else {
                -0.5
            }
        })
        .collect();
    DenseTensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn median_time(repeats: usize, mut f: impl FnMut() -> Result<DenseTensor>) -> Result<(Duration, DenseTensor)> {
    let mut times = Vec::with_capacity(repeats);
    let mut out = None;
    for _ in 0..repeats {
        let t0 = Instant::now();
        let y = std::hint::black_box(f()?);
        times.push(t0.elapsed());
        out = Some(y);
    }
    times.sort();
    Ok((times[times.len() / 2], out.expect("at least one repeat")))
}

fn compare(a: &DenseTensor, b: &DenseTensor) -> (bool, f32) {
    if a.shape() != b.shape() {
        return (false, f32::INFINITY);
    }
    let mut exact = true;
    let mut diff = 0.0f32;
    for (x, y) in a.data().iter().zip(b.data()) {
        exact &= x.to_bits() == y.to_bits();
        diff = diff.max((x - y).abs());
    }
    (exact, diff)
}

/// Runs one case `repeats` times on each path and reports the median times.
pub fn run_case(case: &BenchCase, repeats: usize, seed: u64) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::config("bench needs at least one repeat"));
    }
    if case.batch() == 0 {
        return Err(Error::config(format!("bench case '{}' has an empty batch", case.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = 0.25 + rng.random::<f64>();
    let scale = (1.0 * alpha) as f32;
    match case {
        BenchCase::Conv {
            name,
            batch,
            channels,
            length,
            filters,
            kernel,
            stride,
        } => {
            let x = ternary(&mut rng, &[*batch, *channels, *length], 0.4);
            let w = ternary(&mut rng, &[*filters, *channels, *kernel], 0.3);
            let xp = pack_ternary(&x, 1.0)?;
            let wp = pack_ternary(&w, alpha)?;
            let rows = PackedRows::conv_kernel(&wp)?;
            let (dense, yd) = median_time(repeats, || Ok(conv1d_forward(&x, &w, *stride)?.scale(scale)))?;
            let (packed, yp) = median_time(repeats, || conv1d_packed_prepared(&xp, &rows, *kernel, *stride))?;
            let (exact, max_abs_diff) = compare(&yd, &yp);
            Ok(BenchReport {
                name: name.clone(),
                dense,
                packed,
                dense_weight_bytes: 4 * w.len(),
                packed_weight_bytes: wp.packed_bytes(),
                exact,
                max_abs_diff,
            })
        }
        BenchCase::Dense {
            name,
            batch,
            inputs,
            outputs,
        } => {
            let x = ternary(&mut rng, &[*batch, *inputs], 0.4);
            // Dense path multiplies by [n_in, n_out]; packed rows are [n_out, n_in].
            let w = ternary(&mut rng, &[*inputs, *outputs], 0.3);
            let mut wt = vec![0.0f32; w.len()];
            for i in 0..*inputs {
                for o in 0..*outputs {
                    wt[o * inputs + i] = w.data()[i * outputs + o];
                }
            }
            let wp = pack_ternary(&DenseTensor::new(vec![*outputs, *inputs], wt)?, alpha)?;
            let rows = PackedRows::from_tensor(&wp, *inputs)?;
            let xp = pack_ternary(&x, 1.0)?;
            let (dense, yd) = median_time(repeats, || Ok(dense_forward(&x, &w, None)?.scale(scale)))?;
            let (packed, yp) = median_time(repeats, || dense_packed_prepared(&xp, &rows))?;
            let (exact, max_abs_diff) = compare(&yd, &yp);
            Ok(BenchReport {
                name: name.clone(),
                dense,
                packed,
                dense_weight_bytes: 4 * w.len(),
                packed_weight_bytes: wp.packed_bytes(),
                exact,
                max_abs_diff,
            })
        }
    }
}

pub fn run_cases(cases: &[BenchCase], repeats: usize, seed: u64) -> Result<Vec<BenchReport>> {
    cases
        .iter()
        .enumerate()
        .map(|(i, c)| run_case(c, repeats, seed.wrapping_add(i as u64)))
        .collect()
}

pub fn reports_table(reports: &[BenchReport]) -> String {
    let mut s = format!(
        "{:<22} {:>12} {:>12} {:>8} {:>8} {:>6}\n",
        "case", "dense_us", "packed_us", "speedup", "memory", "exact"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<22} {:>12.1} {:>12.1} {:>7.2}x {:>7.1}x {:>6}",
            r.name,
            r.dense.as_secs_f64() * 1e6,
            r.packed.as_secs_f64() * 1e6,
            r.speedup(),
            r.memory_ratio(),
            if r.exact { "yes" } else { "NO" }
        );
    }
    s
}
