//! CSV artifacts. Every file opens with `#` comment lines carrying the
//! config digest and seed.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::cli_error::{CliError, CliResult};

/// File names written under `--out`.
pub const ARTIFACT_FILES: ArtifactFiles = ArtifactFiles {
    train_log: "train_log.csv",
    episodes: "episodes.csv",
    checkpoint: "checkpoint.json",
    best: "best.json",
    eval_rows: "eval_episodes.csv",
    eval_summary: "eval_summary.json",
    trajectory: "trajectory.csv",
};

#[derive(Debug, Clone, Copy)]
pub struct ArtifactFiles {
    pub train_log: &'static str,
    pub episodes: &'static str,
    pub checkpoint: &'static str,
    pub best: &'static str,
    pub eval_rows: &'static str,
    pub eval_summary: &'static str,
    pub trajectory: &'static str,
}

pub(crate) fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub(crate) fn csv_writer(
    path: &Path,
    digest: &str,
    seed: u64,
    extra: &[(&str, String)],
    header: &[&str],
) -> CliResult<csv::Writer<File>> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut head = format!("# config_digest={digest}\n# seed={seed}\n");
    for (k, v) in extra {
        head.push_str(&format!("# {k}={v}\n"));
    }
    f.write_all(head.as_bytes()).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    w.write_record(header)?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(w)
}

/// Parse a CSV artifact, skipping its comment header.
pub fn read_csv_rows<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
