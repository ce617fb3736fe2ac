//! Coexisting PPO power control for underlay spectrum sharing.
//!
//! - [`geometry`]: user placement, mobility and LOS/NLOS channel gains.
//! - [`radio`]: distortion-aware SINDR, rates, energy efficiency, nQoS.
//! - [`env`]: the episodic environment, observations and rewards.
//! - [`neural`]: dense Gaussian policy / value nets with exact gradients and Adam.
//! - [`ppo`]: GAE, clipped surrogate, value regression and the training loop.
//! - [`harness`]: configuration, seed sweeps, CSV metrics and summaries.

pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod neural;
pub mod ppo;
pub mod radio;

pub use error::{Error, Result};
