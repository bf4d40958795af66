//! Episodic environments driven by the trainer.

mod reentry;
mod toy;

pub use reentry::{
    latitude_reward, obstacle_check, reward_fn, terminal_check, ChannelKind, Ellipse, InitialConditions,
    ObstacleMap, ProblemKind, ProblemSpec, ReentryEnv, StepInfo, StepResult, TraceRow,
};
pub use toy::{BoundedBandit, DurationChoice};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    None,
    Goal,
    ConstraintViolation,
    Obstacle,
    Timeout,
}

impl Termination {
    pub fn is_terminal(self) -> bool {
        self != Termination::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::None => "none",
            Termination::Goal => "goal",
            Termination::ConstraintViolation => "constraint-violation",
            Termination::Obstacle => "obstacle",
            Termination::Timeout => "timeout",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One agent-level transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub cause: Termination,
}

/// An episodic MDP with continuous actions in `[-1, 1]^n`.
pub trait Env: Send {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Start a new episode and return its first observation.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Advance one action step. Callers clamp actions to `[-1, 1]` first.
    fn step(&mut self, action: &[f64]) -> Result<Transition>;
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn observation_dim(&self) -> usize {
        (**self).observation_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        (**self).step(action)
    }
}
