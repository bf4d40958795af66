#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hlas_cli::config::ExperimentConfig;
use hlas_cli::RunConfig;

pub fn repo_configs() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

pub fn experiment_path() -> PathBuf {
    repo_configs().join("experiment.toml")
}

/// The shipped experiment with a small network and short collections, so
/// end-to-end runs take seconds.
pub fn tiny_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(experiment_path()).unwrap();
    let vehicle = repo_configs().join("vehicle/shuttle.toml");
    let mut out = text.replace(
        "vehicle = \"vehicle/shuttle.toml\"",
        &format!("vehicle = {:?}", vehicle.display().to_string()),
    );
    for (from, to) in [
        ("shared_layers = [256, 256]", "shared_layers = [16, 16]"),
        ("head_hidden = 128", "head_hidden = 8"),
        ("n_envs = 6", "n_envs = 2"),
        ("steps_per_env = 4096", "steps_per_env = 64"),
        ("minibatch = 128", "minibatch = 32"),
        ("n_epochs = 10", "n_epochs = 2"),
    ] {
        assert!(out.contains(from), "{from}");
        out = out.replace(from, to);
    }
    let path = dir.join("experiment.toml");
    std::fs::write(&path, out).unwrap();
    path
}

pub fn run_config(config: PathBuf, out: PathBuf) -> RunConfig {
    let exp = ExperimentConfig::load(&config).unwrap();
    let mut rc = RunConfig::from_defaults(config, &exp);
    rc.out = out;
    rc
}
