//! Training, evaluation, planning and gradient self-checks for reentry
//! policies, as a library behind the `hlas` binary. Core types are
//! re-exported so downstream code needs one dependency.

pub use hlas_core::*;

mod artifacts;
mod cli_error;
mod eval;
mod plan;
mod train;

pub use artifacts::{read_csv_rows, ARTIFACT_FILES};
pub use cli_error::{CliError, CliResult};
pub use eval::{run_eval, EvalAggregates, EvalReport, EvalRow};
pub use plan::{run_plan, PlanOutcome, TrajectoryRow};
pub use train::{run_train, EpisodeLogRow, TrainLogRow, TrainSummary};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use hlas_core::checkpoint::{Checkpoint, CheckpointMeta};
use hlas_core::config::ExperimentConfig;
use hlas_core::env::ProblemSpec;
use hlas_core::gradcheck::{FaultInjection, GradcheckReport};
use hlas_core::policy::PolicyParams;
use hlas_core::vehicle::VehicleParams;

/// Everything one command needs, after flags have been merged over the
/// config file's `[cli]` defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub config: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub problem: String,
    pub variant: String,
    /// Policy to evaluate or plan with, or to resume training from.
    pub checkpoint: Option<PathBuf>,
    pub n_episodes: usize,
    /// Multiplier on the initial-condition perturbation widths.
    pub ic_scale: f64,
    /// Environment steps for `train`.
    pub budget_steps: usize,
    /// Corrupt one gradient block in `gradcheck`.
    pub inject_fault: Option<String>,
}

impl RunConfig {
    pub fn from_defaults(config: PathBuf, exp: &ExperimentConfig) -> Self {
        let d = exp.cli();
        Self {
            config,
            seed: d.seed,
            out: d.out.clone(),
            problem: d.problem.clone(),
            variant: d.variant.clone(),
            checkpoint: None,
            n_episodes: d.n_episodes,
            ic_scale: d.ic_scale,
            budget_steps: d.budget_steps,
            inject_fault: None,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.n_episodes == 0 {
            return Err(CliError::Validation("--n-episodes must be >= 1".into()));
        }
        if !(self.ic_scale >= 0.0 && self.ic_scale.is_finite()) {
            return Err(CliError::Validation("--ic-scale must be finite and >= 0".into()));
        }
        if let Some(c) = &self.checkpoint {
            if !c.is_file() {
                return Err(CliError::Validation(format!(
                    "checkpoint {} does not exist",
                    c.display()
                )));
            }
        }
        Ok(())
    }
}

/// Loaded configuration plus the problem a run works on.
pub(crate) struct Setup {
    pub cfg: ExperimentConfig,
    pub spec: Arc<ProblemSpec>,
    pub vehicle: Arc<VehicleParams>,
}

impl Setup {
    pub fn load(rc: &RunConfig) -> CliResult<Self> {
        rc.validate()?;
        let cfg = ExperimentConfig::load(&rc.config)?;
        let spec = Arc::new(cfg.problem(&rc.problem, &rc.variant)?);
        let vehicle = Arc::new(cfg.vehicle.clone());
        Ok(Self { cfg, spec, vehicle })
    }

    /// Load a checkpoint and check it fits this problem's network.
    pub fn load_policy(&self, path: &Path) -> CliResult<(PolicyParams, CheckpointMeta)> {
        let ckpt = Checkpoint::load(path)?;
        let params = ckpt.params()?;
        let arch = self.cfg.network(self.spec.hlas.action_dim())?;
        if params.arch != arch {
            return Err(CliError::Validation(format!(
                "checkpoint architecture {:?} does not match config {:?}",
                params.arch, arch
            )));
        }
        if params.obs_scales != self.spec.obs_scales {
            return Err(CliError::Validation(
                "checkpoint observation scales differ from the config".into(),
            ));
        }
        Ok((params, ckpt.meta))
    }
}

/// Run every finite-difference oracle. A failing check is an oracle
/// failure (exit status 3).
pub fn run_gradcheck(rc: &RunConfig) -> CliResult<GradcheckReport> {
    let fault = FaultInjection {
        block: rc.inject_fault.clone(),
    };
    let report = hlas_core::gradcheck::run_gradcheck(rc.seed, &fault)?;
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::Oracle(format!(
            "gradient mismatch in {}\n{report}",
            report.failing_blocks().join(", ")
        )))
    }
}
