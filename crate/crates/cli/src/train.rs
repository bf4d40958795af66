use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use hlas_core::checkpoint::{Checkpoint, CheckpointMeta};
use hlas_core::env::{ReentryEnv, Termination};
use hlas_core::policy::PolicyParams;
use hlas_core::trainer::{IterationMetrics, Trainer};

use crate::artifacts::{csv_writer, ensure_dir, ARTIFACT_FILES};
use crate::cli_error::CliResult;
use crate::{RunConfig, Setup};

/// One line of `train_log.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub env_steps: usize,
    pub episodes: usize,
    /// Empty until the first episode finishes.
    pub avg_return: Option<f64>,
    pub goal_episodes: usize,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub d: f64,
    pub c3: f64,
    pub mean_abs_mu: f64,
    pub approx_kl: f64,
    pub wall_clock: f64,
}

impl From<&IterationMetrics> for TrainLogRow {
    fn from(m: &IterationMetrics) -> Self {
        Self {
            iteration: m.iteration,
            env_steps: m.env_steps,
            episodes: m.episodes,
            avg_return: m.avg_return,
            goal_episodes: m.goal_episodes,
            clip_fraction: m.clip_fraction,
            value_loss: m.value_loss,
            entropy: m.entropy,
            d: m.d,
            c3: m.c3,
            mean_abs_mu: m.mean_abs_mu,
            approx_kl: m.approx_kl,
            wall_clock: m.wall_clock,
        }
    }
}

/// One line of `episodes.csv`: every finished training episode in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogRow {
    pub episode: usize,
    pub iteration: usize,
    pub worker: usize,
    pub ret: f64,
    pub length: usize,
    pub cause: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub env_steps: usize,
    pub episodes: usize,
    pub goal_episodes: usize,
    /// Mean over the first `return_window` episodes.
    pub first_window_avg: Option<f64>,
    /// Mean over the last `return_window` episodes.
    pub final_window_avg: Option<f64>,
    pub best_avg_return: Option<f64>,
}

/// Train until `budget_steps` environment steps have been collected,
/// writing the log, the episode list and checkpoints under `out`.
pub fn run_train(rc: &RunConfig) -> CliResult<TrainSummary> {
    let setup = Setup::load(rc)?;
    let tcfg = setup.cfg.trainer(&rc.variant)?;
    let window = tcfg.return_window;
    let digest = setup.cfg.digest().to_string();
    ensure_dir(&rc.out)?;

    let (params, resumed) = match &rc.checkpoint {
        Some(path) => (setup.load_policy(path)?.0, Some(path.display().to_string())),
        None => {
            let arch = setup.cfg.network(setup.spec.hlas.action_dim())?;
            let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
            let p = PolicyParams::init(
                arch,
                setup.spec.obs_scales.to_vec(),
                setup.cfg.log_std_init(),
                &mut rng,
            )?;
            (p, None)
        }
    };
    let envs = (0..tcfg.n_envs)
        .map(|_| ReentryEnv::new(setup.spec.clone(), setup.vehicle.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut trainer = Trainer::new(tcfg, params, envs, rc.seed)?;

    let mut extra = vec![
        ("problem", rc.problem.clone()),
        ("variant", rc.variant.clone()),
    ];
    if let Some(r) = &resumed {
        extra.push(("resumed_from", r.clone()));
    }
    let mut log = csv_writer(
        &rc.out.join(ARTIFACT_FILES.train_log),
        &digest,
        rc.seed,
        &extra,
        &TRAIN_LOG_HEADER,
    )?;
    let mut episodes = csv_writer(
        &rc.out.join(ARTIFACT_FILES.episodes),
        &digest,
        rc.seed,
        &extra,
        &EPISODE_HEADER,
    )?;

    let meta = |t: &Trainer<ReentryEnv>| CheckpointMeta {
        config_digest: digest.clone(),
        seed: rc.seed,
        problem: rc.problem.clone(),
        variant: rc.variant.clone(),
        iteration: t.iteration(),
        env_steps: t.env_steps(),
        best_avg_return: t.best_avg_return(),
    };
    let ckpt_path = rc.out.join(ARTIFACT_FILES.checkpoint);
    Checkpoint::new(&trainer.params, meta(&trainer)).save(&ckpt_path)?;

    let mut episode_index = 0;
    while trainer.env_steps() < rc.budget_steps {
        let m = trainer.train_iteration()?;
        log.serialize(TrainLogRow::from(&m))?;
        for ep in trainer.last_episodes() {
            episodes.serialize(EpisodeLogRow {
                episode: episode_index,
                iteration: m.iteration,
                worker: ep.env,
                ret: ep.ret,
                length: ep.length,
                cause: ep.cause,
            })?;
            episode_index += 1;
        }
        log.flush().map_err(|e| crate::CliError::io(&rc.out, e))?;
        episodes.flush().map_err(|e| crate::CliError::io(&rc.out, e))?;
        let c = Checkpoint::new(&trainer.params, meta(&trainer));
        c.save(&ckpt_path)?;
        if m.new_best {
            c.save(rc.out.join(ARTIFACT_FILES.best))?;
        }
    }

    let returns = trainer.episode_returns();
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    Ok(TrainSummary {
        iterations: trainer.iteration(),
        env_steps: trainer.env_steps(),
        episodes: returns.len(),
        goal_episodes: trainer.goal_episodes(),
        first_window_avg: mean(&returns[..window.min(returns.len())]),
        final_window_avg: trainer.moving_average(),
        best_avg_return: trainer.best_avg_return(),
    })
}

const TRAIN_LOG_HEADER: [&str; 13] = [
    "iteration",
    "env_steps",
    "episodes",
    "avg_return",
    "goal_episodes",
    "clip_fraction",
    "value_loss",
    "entropy",
    "d",
    "c3",
    "mean_abs_mu",
    "approx_kl",
    "wall_clock",
];

const EPISODE_HEADER: [&str; 6] = ["episode", "iteration", "worker", "ret", "length", "cause"];
