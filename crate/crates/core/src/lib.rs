pub mod bench;
pub mod bitpack;
pub mod cli;
pub mod data;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod quantize;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
