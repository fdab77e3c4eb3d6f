//! Safety-constrained multi-agent reinforcement learning for active voltage
//! control on radial distribution networks.
//!
//! The crate bundles an AC power-flow simulator, a constrained Markov game
//! built on top of it, a Lagrangian actor-critic learner with an
//! unconstrained baseline, evaluation metrics, and the experiment harness
//! used by the `safevolt` command-line tool.

pub mod env;
pub mod grid;
pub mod learner;
pub mod metrics;
pub mod nn;
pub mod powerflow;
pub mod config;
pub mod train;
pub mod runner;
