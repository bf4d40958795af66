//! Small synthetic MDPs for exercising the trainer.

use rand_chacha::ChaCha8Rng;

use super::{Env, Termination, Transition};
use crate::error::{Error, Result};

fn check_len(action: &[f64], n: usize) -> Result<()> {
    if action.len() != n {
        return Err(Error::Shape(format!(
            "action has {} components, expected {n}",
            action.len()
        )));
    }
    Ok(())
}

/// One-step bandit on a bounded action: reward 1 iff the clipped action is
/// at least `threshold`. Any unclipped mean past the bound earns the same
/// reward, which is what lets the mean wind up.
#[derive(Debug, Clone)]
pub struct BoundedBandit {
    pub threshold: f64,
}

impl Default for BoundedBandit {
    fn default() -> Self {
        Self { threshold: 0.9 }
    }
}

impl Env for BoundedBandit {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![1.0]
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        check_len(action, 1)?;
        let hit = action[0].clamp(-1.0, 1.0) >= self.threshold;
        Ok(Transition {
            observation: vec![1.0],
            reward: if hit { 1.0 } else { 0.0 },
            cause: if hit {
                Termination::Goal
            } else {
                Termination::Timeout
            },
        })
    }
}

/// Cover a fixed distance with one of two step lengths chosen through a
/// duration action. The decoded duration `tau = 2 + 1.5 (a + 1)` lies in
/// `[2, 5]`; `tau >= 3.5` takes the long stride. Reaching the end pays
/// `terminal_reward` regardless of how many steps it took, so only
/// discounting separates the two strategies.
#[derive(Debug, Clone)]
pub struct DurationChoice {
    pub distance: f64,
    pub short_stride: f64,
    pub long_stride: f64,
    pub terminal_reward: f64,
    remaining: f64,
    steps: usize,
}

impl Default for DurationChoice {
    fn default() -> Self {
        Self {
            distance: 10.0,
            short_stride: 2.0,
            long_stride: 5.0,
            terminal_reward: 1.0,
            remaining: 10.0,
            steps: 0,
        }
    }
}

impl DurationChoice {
    pub const TAU_MIN: f64 = 2.0;
    pub const TAU_MAX: f64 = 5.0;

    pub fn decode_tau(raw: f64) -> f64 {
        Self::TAU_MIN + 0.5 * (raw.clamp(-1.0, 1.0) + 1.0) * (Self::TAU_MAX - Self::TAU_MIN)
    }

    pub fn takes_long_stride(raw: f64) -> bool {
        Self::decode_tau(raw) >= 0.5 * (Self::TAU_MIN + Self::TAU_MAX)
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.remaining / self.distance]
    }
}

impl Env for DurationChoice {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.remaining = self.distance;
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        check_len(action, 1)?;
        self.remaining -= if Self::takes_long_stride(action[0]) {
            self.long_stride
        } else {
            self.short_stride
        };
        self.steps += 1;
        let done = self.remaining <= 1e-12;
        Ok(Transition {
            observation: self.observe(),
            reward: if done { self.terminal_reward } else { 0.0 },
            cause: if done {
                Termination::Goal
            } else {
                Termination::None
            },
        })
    }
}
