//! Sequential planning: query the deterministic policy, execute the decoded
//! sub-trajectory, repeat until the episode ends.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use hlas_core::env::{ProblemSpec, ReentryEnv, Termination};
use hlas_core::policy::{deterministic_action, PolicyParams};
use hlas_core::vehicle::{density, heating, VehicleState, DEG};

use crate::artifacts::{csv_writer, ensure_dir, ARTIFACT_FILES};
use crate::cli_error::{CliError, CliResult};
use crate::{RunConfig, Setup};

/// One integrator step of a planned trajectory. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub h: f64,
    pub v: f64,
    pub theta: f64,
    pub phi: f64,
    pub gamma: f64,
    pub psi: f64,
    pub alpha: f64,
    pub sigma: f64,
    /// Command held over the step; empty on the initial row.
    pub alpha_cmd: Option<f64>,
    pub sigma_cmd: Option<f64>,
    pub q: f64,
    /// Action-step reward, on the last row of each action step.
    pub reward: f64,
    /// Zero-based action step that produced the row; empty on the initial
    /// row.
    pub action_step_index: Option<usize>,
    /// Set on the final row only.
    pub termination_cause: Option<Termination>,
}

impl TrajectoryRow {
    fn from_state(t: f64, s: &VehicleState, q: f64) -> Self {
        Self {
            t,
            h: s.h,
            v: s.v,
            theta: s.theta / DEG,
            phi: s.phi / DEG,
            gamma: s.gamma / DEG,
            psi: s.psi / DEG,
            alpha: s.alpha / DEG,
            sigma: s.sigma / DEG,
            alpha_cmd: None,
            sigma_cmd: None,
            q,
            reward: 0.0,
            action_step_index: None,
            termination_cause: None,
        }
    }

    pub fn state(&self) -> VehicleState {
        VehicleState {
            h: self.h,
            v: self.v,
            theta: self.theta * DEG,
            phi: self.phi * DEG,
            gamma: self.gamma * DEG,
            psi: self.psi * DEG,
            alpha: self.alpha * DEG,
            sigma: self.sigma * DEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub initial: VehicleState,
    pub final_state: VehicleState,
    pub cause: Termination,
    pub action_steps: usize,
    pub total_reward: f64,
    pub flight_time: f64,
    /// Wall-clock seconds per policy query.
    pub policy_eval_seconds: Vec<f64>,
    /// Empty unless requested.
    pub rows: Vec<TrajectoryRow>,
}

/// Run one deterministic episode from `initial`.
pub(crate) fn rollout(
    params: &PolicyParams,
    env: &mut ReentryEnv,
    initial: VehicleState,
    trace: bool,
) -> CliResult<PlanOutcome> {
    let mut obs = env.reset_to(initial);
    let mut rows = Vec::new();
    if trace {
        let v = env.vehicle();
        let q = heating(&initial, density(initial.h, v), v);
        rows.push(TrajectoryRow::from_state(0.0, &initial, q));
    }
    let mut timings = Vec::new();
    let mut total = 0.0;
    loop {
        let started = Instant::now();
        let mu = deterministic_action(params, &obs)?;
        timings.push(started.elapsed().as_secs_f64());
        let raw: Vec<f64> = mu.iter().map(|m| m.clamp(-1.0, 1.0)).collect();
        let index = env.action_steps();
        let r = env.step_action(&raw)?;
        total += r.reward;
        if trace {
            let n = r.trace.len();
            for (k, tr) in r.trace.iter().enumerate() {
                let mut row = TrajectoryRow::from_state(tr.t, &tr.state, tr.q);
                row.alpha_cmd = Some(tr.control.alpha_cmd / DEG);
                row.sigma_cmd = Some(tr.control.sigma_cmd / DEG);
                row.action_step_index = Some(index);
                if k + 1 == n {
                    row.reward = r.reward;
                    if r.terminated {
                        row.termination_cause = Some(r.cause);
                    }
                }
                rows.push(row);
            }
        }
        if r.terminated {
            return Ok(PlanOutcome {
                initial,
                final_state: *env.state(),
                cause: r.cause,
                action_steps: env.action_steps(),
                total_reward: total,
                flight_time: env.time(),
                policy_eval_seconds: timings,
                rows,
            });
        }
        obs = r.observation;
    }
}

/// Initial state for a seeded run: the nominal condition perturbed by
/// `ic_scale` times the training widths.
pub(crate) fn sample_initial(spec: &ProblemSpec, ic_scale: f64, rng: &mut ChaCha8Rng) -> VehicleState {
    spec.initial.scaled(ic_scale).sample(rng)
}

/// Plan from the seeded initial condition and write `trajectory.csv`.
pub fn run_plan(rc: &RunConfig) -> CliResult<PlanOutcome> {
    let setup = Setup::load(rc)?;
    let ckpt = rc
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Validation("plan needs --checkpoint".into()))?;
    let (params, _) = setup.load_policy(ckpt)?;
    let mut env = ReentryEnv::new(setup.spec.clone(), setup.vehicle.clone())?.with_trace(true);
    let initial = sample_initial(&setup.spec, rc.ic_scale, &mut ChaCha8Rng::seed_from_u64(rc.seed));
    let outcome = rollout(&params, &mut env, initial, true)?;

    ensure_dir(&rc.out)?;
    let extra = [
        ("problem", rc.problem.clone()),
        ("variant", rc.variant.clone()),
        ("checkpoint", ckpt.display().to_string()),
        ("ic_scale", rc.ic_scale.to_string()),
    ];
    let mut w = csv_writer(
        &rc.out.join(ARTIFACT_FILES.trajectory),
        setup.cfg.digest(),
        rc.seed,
        &extra,
        &TRAJECTORY_HEADER,
    )?;
    for row in &outcome.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(&rc.out, e))?;
    Ok(outcome)
}

pub const TRAJECTORY_HEADER: [&str; 15] = [
    "t",
    "h",
    "v",
    "theta",
    "phi",
    "gamma",
    "psi",
    "alpha",
    "sigma",
    "alpha_cmd",
    "sigma_cmd",
    "q",
    "reward",
    "action_step_index",
    "termination_cause",
];
