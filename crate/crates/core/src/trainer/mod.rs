//! PPO with an adaptive penalty that keeps the action mean inside the
//! action box.

mod loss;
mod rollout;

pub use loss::{
    adapt_penalty_coefficient, antiwindup_gradient, antiwindup_penalty, ppo_loss, LossCoefs,
    LossOutput, MiniBatch,
};
pub use rollout::{
    collect_rollouts, compute_advantages, normalize, Advantages, EnvSlot, EpisodeRecord,
    RolloutBatch,
};

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, Termination};
use crate::error::{Error, Result};
use crate::policy::{Adam, AdamConfig, PolicyParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    /// Discount factor.
    pub gamma: f64,
    pub lr: f64,
    pub clip_eps: f64,
    /// Value-loss weight `c1`.
    pub vf_coef: f64,
    /// Entropy weight `c2`.
    pub ent_coef: f64,
    pub antiwindup: bool,
    /// Margin `eps`: the penalty activates past `|mu| = 1 - eps`, and the
    /// target level is `eps^2`.
    pub antiwindup_eps: f64,
    /// Initial anti-windup weight `c3`.
    pub c3_init: f64,
    pub gae_lambda: f64,
    pub n_envs: usize,
    pub steps_per_env: usize,
    pub minibatch: usize,
    pub n_epochs: usize,
    pub max_grad_norm: f64,
    /// Episodes in the moving-average return.
    pub return_window: usize,
}

impl TrainerConfig {
    pub fn d_tar(&self) -> f64 {
        self.antiwindup_eps * self.antiwindup_eps
    }

    pub fn batch_size(&self) -> usize {
        self.n_envs * self.steps_per_env
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        };
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma", "must lie in (0, 1]")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", "must be positive")?;
        check(self.clip_eps > 0.0, "clip_eps", "must be positive")?;
        check(self.vf_coef >= 0.0, "vf_coef", "must be non-negative")?;
        check(self.ent_coef >= 0.0, "ent_coef", "must be non-negative")?;
        check(
            self.antiwindup_eps > 0.0 && self.antiwindup_eps < 1.0,
            "antiwindup_eps",
            "must lie in (0, 1)",
        )?;
        check(self.c3_init > 0.0, "c3_init", "must be positive")?;
        check(
            (0.0..=1.0).contains(&self.gae_lambda),
            "gae_lambda",
            "must lie in [0, 1]",
        )?;
        check(self.n_envs >= 1, "n_envs", "must be >= 1")?;
        check(self.steps_per_env >= 1, "steps_per_env", "must be >= 1")?;
        check(self.n_epochs >= 1, "n_epochs", "must be >= 1")?;
        check(self.max_grad_norm > 0.0, "max_grad_norm", "must be positive")?;
        check(self.return_window >= 1, "return_window", "must be >= 1")?;
        check(
            self.minibatch >= 1 && self.batch_size() % self.minibatch == 0,
            "minibatch",
            "must divide n_envs * steps_per_env",
        )
    }

    /// Settings for the small synthetic MDPs.
    pub fn toy() -> Self {
        Self {
            gamma: 0.9,
            lr: 3e-3,
            clip_eps: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.0,
            antiwindup: true,
            antiwindup_eps: 0.1,
            c3_init: 1.0,
            gae_lambda: 0.95,
            n_envs: 2,
            steps_per_env: 64,
            minibatch: 32,
            n_epochs: 10,
            max_grad_norm: 0.5,
            return_window: 100,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub env_steps: usize,
    pub episodes: usize,
    /// Moving average of undiscounted returns over the last
    /// `return_window` episodes; empty until an episode finishes.
    pub avg_return: Option<f64>,
    pub goal_episodes: usize,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Anti-windup penalty of the collected batch.
    pub d: f64,
    /// Coefficient used for this iteration's updates.
    pub c3: f64,
    pub mean_abs_mu: f64,
    pub approx_kl: f64,
    pub new_best: bool,
    pub wall_clock: f64,
}

pub struct Trainer<E> {
    pub cfg: TrainerConfig,
    pub params: PolicyParams,
    adam: Adam,
    slots: Vec<EnvSlot<E>>,
    c3: f64,
    iteration: usize,
    env_steps: usize,
    returns: Vec<f64>,
    goal_episodes: usize,
    best_avg: Option<f64>,
    last_episodes: Vec<EpisodeRecord>,
    shuffle_rng: ChaCha8Rng,
    started: Instant,
}

/// Seed of worker `i`'s stream, derived from the run seed.
pub fn worker_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(1 + i as u64)
}

impl<E: Env> Trainer<E> {
    /// `envs` supplies one environment per worker.
    pub fn new(cfg: TrainerConfig, params: PolicyParams, envs: Vec<E>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if envs.len() != cfg.n_envs {
            return Err(Error::InvalidArgument(format!(
                "{} environments for n_envs = {}",
                envs.len(),
                cfg.n_envs
            )));
        }
        let slots = envs
            .into_iter()
            .enumerate()
            .map(|(i, e)| EnvSlot::new(e, ChaCha8Rng::seed_from_u64(worker_seed(seed, i))))
            .collect();
        Ok(Self {
            adam: Adam::new(&params.weights, AdamConfig::default()),
            c3: cfg.c3_init,
            cfg,
            params,
            slots,
            iteration: 0,
            env_steps: 0,
            returns: Vec::new(),
            goal_episodes: 0,
            best_avg: None,
            last_episodes: Vec::new(),
            shuffle_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED),
            started: Instant::now(),
        })
    }

    pub fn c3(&self) -> f64 {
        self.c3
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    /// Undiscounted returns of every finished episode, in completion order.
    pub fn episode_returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn goal_episodes(&self) -> usize {
        self.goal_episodes
    }

    pub fn best_avg_return(&self) -> Option<f64> {
        self.best_avg
    }

    /// Episodes finished during the latest iteration.
    pub fn last_episodes(&self) -> &[EpisodeRecord] {
        &self.last_episodes
    }

    pub fn moving_average(&self) -> Option<f64> {
        let w = self.cfg.return_window.min(self.returns.len());
        if w == 0 {
            return None;
        }
        Some(self.returns[self.returns.len() - w..].iter().sum::<f64>() / w as f64)
    }

    fn clip_gradient(&self, grads: &mut crate::policy::Weights) {
        let norm = grads.l2_norm();
        if norm > self.cfg.max_grad_norm {
            grads.scale(self.cfg.max_grad_norm / norm);
        }
    }

    /// Collect, estimate advantages, and run `n_epochs` of minibatch updates.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let batch = collect_rollouts(&self.params, &mut self.slots, &self.cfg)?;
        let adv = compute_advantages(&batch, self.cfg.gamma, self.cfg.gae_lambda);
        let d_batch = antiwindup_penalty(batch.mus.view(), self.cfg.antiwindup_eps);
        if self.cfg.antiwindup {
            self.c3 = adapt_penalty_coefficient(self.c3, d_batch, self.cfg.d_tar());
        }
        let coefs = LossCoefs {
            clip_eps: self.cfg.clip_eps,
            vf_coef: self.cfg.vf_coef,
            ent_coef: self.cfg.ent_coef,
            c3: self.c3,
            antiwindup: self.cfg.antiwindup,
            antiwindup_eps: self.cfg.antiwindup_eps,
        };

        let n = batch.len();
        let old_lp = Array1::from_vec(batch.log_probs.clone());
        let advantages = Array1::from_vec(adv.normalized);
        let returns = Array1::from_vec(adv.returns);
        let mut order: Vec<usize> = (0..n).collect();
        let (mut clip_sum, mut vl_sum, mut ent_sum, mut kl_sum, mut count) =
            (0.0, 0.0, 0.0, 0.0, 0usize);
        for _ in 0..self.cfg.n_epochs {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(self.cfg.minibatch) {
                let obs: Array2<f64> = batch.obs.select(Axis(0), chunk);
                let actions: Array2<f64> = batch.actions.select(Axis(0), chunk);
                let olp = old_lp.select(Axis(0), chunk);
                let a = advantages.select(Axis(0), chunk);
                let r = returns.select(Axis(0), chunk);
                let mb = MiniBatch {
                    obs: obs.view(),
                    actions: actions.view(),
                    old_log_probs: olp.view(),
                    advantages: a.view(),
                    returns: r.view(),
                };
                let (out, grads) = ppo_loss(&self.params, &mb, &coefs)?;
                let mut g = grads.0;
                self.clip_gradient(&mut g);
                self.adam.update(&mut self.params.weights, &g, self.cfg.lr)?;
                clip_sum += out.clip_fraction;
                vl_sum += out.value_loss;
                ent_sum += out.entropy;
                kl_sum += out.approx_kl;
                count += 1;
            }
        }

        for ep in &batch.episodes {
            self.returns.push(ep.ret);
            if ep.cause == Termination::Goal {
                self.goal_episodes += 1;
            }
        }
        self.last_episodes = batch.episodes;
        self.iteration += 1;
        self.env_steps += n;
        let avg = self.moving_average();
        let new_best = match (avg, self.best_avg) {
            (Some(a), Some(b)) => a > b,
            (Some(_), None) => true,
            _ => false,
        };
        if new_best {
            self.best_avg = avg;
        }
        let c = count.max(1) as f64;
        Ok(IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            episodes: self.returns.len(),
            avg_return: avg,
            goal_episodes: self.goal_episodes,
            clip_fraction: clip_sum / c,
            value_loss: vl_sum / c,
            entropy: ent_sum / c,
            d: d_batch,
            c3: coefs.c3,
            mean_abs_mu: batch.mus.mapv(f64::abs).mean().unwrap_or(0.0),
            approx_kl: kl_sum / c,
            new_best,
            wall_clock: self.started.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BoundedBandit, DurationChoice, Transition};
    use crate::policy::{deterministic_action, Activation, NetArch};

    fn toy_params(seed: u64) -> PolicyParams {
        let arch = NetArch {
            input_dim: 1,
            shared_layers: vec![16],
            head_hidden: 16,
            action_dim: 1,
            activation: Activation::Relu,
        };
        PolicyParams::init(arch, vec![1.0], 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    struct Silent;
    impl Env for Silent {
        fn observation_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn reset(&mut self, _: &mut ChaCha8Rng) -> Vec<f64> {
            vec![0.5]
        }
        fn step(&mut self, _: &[f64]) -> Result<Transition> {
            Ok(Transition {
                observation: vec![0.5],
                reward: 0.0,
                cause: Termination::Goal,
            })
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainerConfig::toy();
        assert!(c.validate().is_ok());
        c.minibatch = 33;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "minibatch"));
        let c = TrainerConfig {
            gamma: 1.5,
            ..TrainerConfig::toy()
        };
        assert!(c.validate().is_err());
        assert!((TrainerConfig::toy().d_tar() - 0.01).abs() < 1e-17);
    }

    #[test]
    fn zero_reward_gives_zero_targets() {
        let cfg = TrainerConfig {
            antiwindup: false,
            ..TrainerConfig::toy()
        };
        let mut t = Trainer::new(cfg, toy_params(0), vec![Silent, Silent], 1).unwrap();
        let m = t.train_iteration().unwrap();
        assert_eq!(m.avg_return, Some(0.0));
        let batch = collect_rollouts(&t.params, &mut t.slots, &t.cfg).unwrap();
        let adv = compute_advantages(&batch, 0.9, 0.95);
        assert!(adv.returns.iter().all(|r| *r == 0.0));
    }

    fn run_metrics(seed: u64) -> Vec<IterationMetrics> {
        let cfg = TrainerConfig::toy();
        let envs = vec![DurationChoice::default(), DurationChoice::default()];
        let mut t = Trainer::new(cfg, toy_params(seed), envs, seed).unwrap();
        (0..3)
            .map(|_| {
                let mut m = t.train_iteration().unwrap();
                m.wall_clock = 0.0;
                m
            })
            .collect()
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        assert_eq!(run_metrics(4), run_metrics(4));
        assert_ne!(run_metrics(4), run_metrics(5));
    }

    #[test]
    fn bandit_mean_moves_toward_reward() {
        let cfg = TrainerConfig {
            n_envs: 1,
            steps_per_env: 128,
            minibatch: 64,
            ..TrainerConfig::toy()
        };
        let mut t = Trainer::new(cfg, toy_params(2), vec![BoundedBandit::default()], 2).unwrap();
        let before = deterministic_action(&t.params, &[1.0]).unwrap()[0];
        for _ in 0..20 {
            t.train_iteration().unwrap();
        }
        let after = deterministic_action(&t.params, &[1.0]).unwrap()[0];
        assert!(after > before + 0.2, "{before} -> {after}");
        assert!(t.c3() > 0.0);
    }

    #[test]
    fn moving_average_and_best() {
        let cfg = TrainerConfig {
            return_window: 3,
            ..TrainerConfig::toy()
        };
        let mut t = Trainer::new(cfg, toy_params(0), vec![Silent, Silent], 0).unwrap();
        assert_eq!(t.moving_average(), None);
        t.returns = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(t.moving_average(), Some(3.0));
    }
}
