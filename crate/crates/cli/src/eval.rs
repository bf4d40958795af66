//! Deterministic-policy evaluation over perturbed initial conditions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use hlas_core::env::{terminal_check, ProblemSpec, ReentryEnv, Termination};
use hlas_core::policy::PolicyParams;
use hlas_core::vehicle::DEG;

use crate::artifacts::{csv_writer, ensure_dir, ARTIFACT_FILES};
use crate::cli_error::{CliError, CliResult};
use crate::plan::{rollout, sample_initial, PlanOutcome};
use crate::{RunConfig, Setup};

/// One evaluation episode. `err_*` are the final terminal-component errors
/// (`h` in metres; the second and third are `v` in m/s and `gamma` in
/// degrees for the latitude problem, `theta` and `phi` in degrees for the
/// debris problem).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: usize,
    pub final_latitude_deg: f64,
    pub terminal_psi: f64,
    pub err_h: f64,
    pub err_2: f64,
    pub err_3: f64,
    pub terminal_met: bool,
    pub ret: f64,
    pub cause: Termination,
    pub length: usize,
    pub flight_time: f64,
    /// Mean wall-clock seconds per policy query.
    pub policy_eval_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregates {
    pub n_episodes: usize,
    pub avg_return: f64,
    /// Episodes that ended outside the terminal tolerances.
    pub terminal_misses: usize,
    pub goals: usize,
    pub mean_final_latitude_deg: f64,
    pub mean_policy_eval_s: f64,
}

impl EvalAggregates {
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            n_episodes: rows.len(),
            avg_return: rows.iter().map(|r| r.ret).sum::<f64>() / n,
            terminal_misses: rows.iter().filter(|r| !r.terminal_met).count(),
            goals: rows.iter().filter(|r| r.cause == Termination::Goal).count(),
            mean_final_latitude_deg: rows.iter().map(|r| r.final_latitude_deg).sum::<f64>() / n,
            mean_policy_eval_s: rows.iter().map(|r| r.policy_eval_s).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub seed: u64,
    pub problem: String,
    pub variant: String,
    pub ic_scale: f64,
    pub aggregates: EvalAggregates,
    /// Episode from the unperturbed initial condition.
    pub nominal: EvalRow,
    #[serde(skip)]
    pub rows: Vec<EvalRow>,
}

fn row(episode: usize, o: &PlanOutcome, spec: &ProblemSpec) -> EvalRow {
    let s = &o.final_state;
    let x = spec.terminal_components(s);
    let unit = |i: usize| match (i, spec.kind) {
        (0, _) | (1, hlas_core::env::ProblemKind::LatitudeMax) => 1.0,
        _ => DEG,
    };
    let err = |i: usize| (x[i] - spec.target[i]) / unit(i);
    EvalRow {
        episode,
        final_latitude_deg: s.phi / DEG,
        terminal_psi: spec.terminal_distance(s),
        err_h: err(0),
        err_2: err(1),
        err_3: err(2),
        terminal_met: terminal_check(s, spec),
        ret: o.total_reward,
        cause: o.cause,
        length: o.action_steps,
        flight_time: o.flight_time,
        policy_eval_s: o.policy_eval_seconds.iter().sum::<f64>()
            / o.policy_eval_seconds.len().max(1) as f64,
    }
}

/// Evaluate `params` on `n_episodes` seeded initial conditions.
pub(crate) fn evaluate(
    params: &PolicyParams,
    env: &mut ReentryEnv,
    n_episodes: usize,
    ic_scale: f64,
    seed: u64,
) -> CliResult<(Vec<EvalRow>, EvalRow)> {
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let x0 = sample_initial(&spec, ic_scale, &mut rng);
        rows.push(row(i, &rollout(params, env, x0, false)?, &spec));
    }
    let x0 = sample_initial(&spec, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
    let nominal = row(0, &rollout(params, env, x0, false)?, &spec);
    Ok((rows, nominal))
}

/// Evaluate the checkpoint and write the per-episode CSV and a JSON
/// summary.
pub fn run_eval(rc: &RunConfig) -> CliResult<EvalReport> {
    let setup = Setup::load(rc)?;
    let ckpt = rc
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Validation("eval needs --checkpoint".into()))?;
    let (params, _) = setup.load_policy(ckpt)?;
    let mut env = ReentryEnv::new(setup.spec.clone(), setup.vehicle.clone())?;
    let (rows, nominal) = evaluate(&params, &mut env, rc.n_episodes, rc.ic_scale, rc.seed)?;
    let report = EvalReport {
        config_digest: setup.cfg.digest().to_string(),
        seed: rc.seed,
        problem: rc.problem.clone(),
        variant: rc.variant.clone(),
        ic_scale: rc.ic_scale,
        aggregates: EvalAggregates::from_rows(&rows),
        nominal,
        rows,
    };

    ensure_dir(&rc.out)?;
    let extra = [
        ("problem", rc.problem.clone()),
        ("variant", rc.variant.clone()),
        ("checkpoint", ckpt.display().to_string()),
        ("ic_scale", rc.ic_scale.to_string()),
    ];
    let mut w = csv_writer(
        &rc.out.join(ARTIFACT_FILES.eval_rows),
        setup.cfg.digest(),
        rc.seed,
        &extra,
        &EVAL_HEADER,
    )?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(&rc.out, e))?;
    let path = rc.out.join(ARTIFACT_FILES.eval_summary);
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}

const EVAL_HEADER: [&str; 12] = [
    "episode",
    "final_latitude_deg",
    "terminal_psi",
    "err_h",
    "err_2",
    "err_3",
    "terminal_met",
    "ret",
    "cause",
    "length",
    "flight_time",
    "policy_eval_s",
];
