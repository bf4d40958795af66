//! Reentry trajectory planning with a high-level action space and PPO.
//!
//! Modules, bottom-up: [`vehicle`] dynamics, the dynamic-inversion
//! [`controller`], the [`hlas`] action decoder, the episodic [`env`]
//! environments, the actor-critic [`policy`] and the PPO [`trainer`].

// Range checks are written `!(x >= lo)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod hlas;
pub mod policy;
pub mod trainer;
pub mod vehicle;

pub use error::{Error, Result};
