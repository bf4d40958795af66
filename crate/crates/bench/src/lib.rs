//! Criterion benchmarks for the simulation and policy hot paths. See
//! `benches/hot_paths.rs`.

use std::path::PathBuf;

/// The shipped experiment config, resolved from this crate's location.
pub fn experiment_path() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/experiment.toml"))
}
