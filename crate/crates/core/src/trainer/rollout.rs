//! Parallel rollout collection and advantage estimation.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::TrainerConfig;
use crate::env::{Env, Termination};
use crate::error::{Error, Result};
use crate::policy::{forward, sample_action, PolicyParams};

/// An environment plus the per-worker state that persists across
/// collections.
pub struct EnvSlot<E> {
    pub env: E,
    pub rng: ChaCha8Rng,
    obs: Vec<f64>,
    ep_return: f64,
    ep_len: usize,
}

impl<E: Env> EnvSlot<E> {
    pub fn new(mut env: E, mut rng: ChaCha8Rng) -> Self {
        let obs = env.reset(&mut rng);
        Self {
            env,
            rng,
            obs,
            ep_return: 0.0,
            ep_len: 0,
        }
    }
}

/// A finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    /// Undiscounted return.
    pub ret: f64,
    pub length: usize,
    pub cause: Termination,
    /// Collection step at which it finished and the worker that ran it.
    pub step: usize,
    pub env: usize,
}

/// Transitions from `n_envs` workers, stored env-major: worker `e` owns rows
/// `e * steps_per_env .. (e + 1) * steps_per_env`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub steps_per_env: usize,
    pub obs: Array2<f64>,
    /// Unclipped sampled actions.
    pub actions: Array2<f64>,
    /// Action means at collection time.
    pub mus: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// The episode ended on this transition.
    pub dones: Vec<bool>,
    pub causes: Vec<Termination>,
    /// Value of the observation following each worker's last transition.
    pub last_values: Vec<f64>,
    /// Episodes finished during this collection, ordered by `(step, env)`.
    pub episodes: Vec<EpisodeRecord>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

struct Fragment {
    obs: Vec<f64>,
    actions: Vec<f64>,
    mus: Vec<f64>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    causes: Vec<Termination>,
    last_value: f64,
    episodes: Vec<EpisodeRecord>,
}

fn run_worker<E: Env>(
    params: &PolicyParams,
    slot: &mut EnvSlot<E>,
    steps: usize,
    env_index: usize,
) -> Result<Fragment> {
    let od = slot.env.observation_dim();
    let ad = slot.env.action_dim();
    let mut f = Fragment {
        obs: Vec::with_capacity(steps * od),
        actions: Vec::with_capacity(steps * ad),
        mus: Vec::with_capacity(steps * ad),
        log_probs: Vec::with_capacity(steps),
        values: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        dones: Vec::with_capacity(steps),
        causes: Vec::with_capacity(steps),
        last_value: 0.0,
        episodes: Vec::new(),
    };
    let log_std = params.log_std();
    for step in 0..steps {
        let out = forward(params, &slot.obs)?;
        let (action, lp) = sample_action(&out.mu, log_std, &mut slot.rng);
        let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let (next_obs, reward, cause) = match slot.env.step(&clipped) {
            Ok(t) => (t.observation, t.reward, t.cause),
            Err(Error::Shape(m)) => return Err(Error::Shape(m)),
            Err(_) => (slot.obs.clone(), 0.0, Termination::ConstraintViolation),
        };
        f.obs.extend_from_slice(&slot.obs);
        f.actions.extend_from_slice(&action);
        f.mus.extend_from_slice(&out.mu);
        f.log_probs.push(lp);
        f.values.push(out.value);
        f.rewards.push(reward);
        f.causes.push(cause);
        f.dones.push(cause.is_terminal());
        slot.ep_return += reward;
        slot.ep_len += 1;
        if cause.is_terminal() {
            f.episodes.push(EpisodeRecord {
                ret: slot.ep_return,
                length: slot.ep_len,
                cause,
                step,
                env: env_index,
            });
            slot.ep_return = 0.0;
            slot.ep_len = 0;
            slot.obs = slot.env.reset(&mut slot.rng);
        } else {
            slot.obs = next_obs;
        }
    }
    f.last_value = forward(params, &slot.obs)?.value;
    Ok(f)
}

/// Run every worker for `cfg.steps_per_env` action steps, one thread per
/// environment, against a shared read-only policy snapshot.
pub fn collect_rollouts<E: Env>(
    params: &PolicyParams,
    slots: &mut [EnvSlot<E>],
    cfg: &TrainerConfig,
) -> Result<RolloutBatch> {
    let steps = cfg.steps_per_env;
    if slots.is_empty() {
        return Err(Error::InvalidArgument("no environments to collect from".into()));
    }
    let od = slots[0].env.observation_dim();
    let ad = slots[0].env.action_dim();
    if od != params.arch.input_dim || ad != params.arch.action_dim {
        return Err(Error::Shape(format!(
            "environment dims ({od}, {ad}) do not match network ({}, {})",
            params.arch.input_dim, params.arch.action_dim
        )));
    }
    let fragments: Vec<Result<Fragment>> = std::thread::scope(|scope| {
        let handles: Vec<_> = slots
            .iter_mut()
            .enumerate()
            .map(|(i, slot)| scope.spawn(move || run_worker(params, slot, steps, i)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rollout worker panicked"))
            .collect()
    });
    let fragments = fragments.into_iter().collect::<Result<Vec<_>>>()?;

    let n = slots.len() * steps;
    let cat = |get: &dyn Fn(&Fragment) -> &Vec<f64>| -> Vec<f64> {
        fragments.iter().flat_map(|f| get(f).iter().copied()).collect()
    };
    let shape_err = |e: ndarray::ShapeError| Error::Shape(e.to_string());
    let mut episodes: Vec<EpisodeRecord> = fragments
        .iter()
        .flat_map(|f| f.episodes.iter().copied())
        .collect();
    episodes.sort_by_key(|e| (e.step, e.env));
    Ok(RolloutBatch {
        n_envs: slots.len(),
        steps_per_env: steps,
        obs: Array2::from_shape_vec((n, od), cat(&|f| &f.obs)).map_err(shape_err)?,
        actions: Array2::from_shape_vec((n, ad), cat(&|f| &f.actions)).map_err(shape_err)?,
        mus: Array2::from_shape_vec((n, ad), cat(&|f| &f.mus)).map_err(shape_err)?,
        log_probs: cat(&|f| &f.log_probs),
        values: cat(&|f| &f.values),
        rewards: cat(&|f| &f.rewards),
        dones: fragments.iter().flat_map(|f| f.dones.iter().copied()).collect(),
        causes: fragments.iter().flat_map(|f| f.causes.iter().copied()).collect(),
        last_values: fragments.iter().map(|f| f.last_value).collect(),
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub raw: Vec<f64>,
    /// Zero mean, unit (population) standard deviation over the batch.
    pub normalized: Vec<f64>,
    /// Value targets, `raw + value`.
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation per worker stream. Episode ends
/// (including timeouts) do not bootstrap; the cut at the end of collection
/// bootstraps from `last_values`.
pub fn compute_advantages(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Advantages {
    let t_len = batch.steps_per_env;
    let mut raw = vec![0.0; batch.len()];
    for e in 0..batch.n_envs {
        let base = e * t_len;
        let mut gae = 0.0;
        for t in (0..t_len).rev() {
            let i = base + t;
            let next_value = if t + 1 == t_len {
                batch.last_values[e]
            } else {
                batch.values[i + 1]
            };
            let live = if batch.dones[i] { 0.0 } else { 1.0 };
            let delta = batch.rewards[i] + gamma * next_value * live - batch.values[i];
            gae = delta + gamma * lambda * live * gae;
            raw[i] = gae;
        }
    }
    let returns = raw.iter().zip(&batch.values).map(|(a, v)| a + v).collect();
    Advantages {
        normalized: normalize(&raw),
        raw,
        returns,
    }
}

pub fn normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    x.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}
