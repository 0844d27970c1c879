//! Step-wise deformable image registration driven by a stochastic
//! planner-actor-critic agent.
//!
//! * [`substrate`]: tensors, reverse-mode differentiation, Adam.
//! * [`warp`]: bilinear warping, field composition, local NCC, TV penalty.
//! * [`env`]: the registration MDP with K-means pseudo-labels and Dice rewards.
//! * [`agent`]: planner, actor and critic networks, losses, replay, training.
//! * [`bench`]: data generation, IDX ingestion, configs, checkpoints, commands.

pub mod agent;
pub mod bench;
pub mod env;
pub mod error;
pub mod image;
pub mod substrate;
pub mod warp;

pub use error::{Error, Result};
