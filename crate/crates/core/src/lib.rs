//! Latent Gaussian policies optimized with PPO and composed with generative
//! action decoders (flow matching or DDPM), trained on a two-timescale
//! schedule.
//!
//! The encoder is a tractable diagonal Gaussian over latents and is the only
//! part updated by policy gradients. The decoder maps `(state, latent)` to an
//! action and is refit by supervised regression from a fixed `N(0, I)` prior
//! between encoder stages.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baseline;
pub mod decoder;
pub mod encoder;
pub mod envs;
pub mod error;
pub mod mathcore;
pub mod par;
pub mod ppo;
pub mod scheduler;
pub mod verify;

pub use error::{Error, Result};
