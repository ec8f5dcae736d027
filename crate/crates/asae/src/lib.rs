//! Cooperative multi-agent reinforcement learning with approximately
//! synchronous advantage estimation (ASAE).
//!
//! The crate trains decentralized actors against a centralized joint-action
//! critic. Per-agent credit is assigned through marginal advantages: the
//! expectation of counterfactual advantages over other agents' policies,
//! estimated by Monte-Carlo sample reorganization. Policy updates solve
//! per-agent clipped surrogate sub-problems under KL restrictions, all agents
//! updating from the same frozen policy snapshot.
//!
//! Modules:
//! - [`diffmath`]: tape autodiff, dense layers, softmax policies, Adam.
//! - [`envs`]: cooperative stochastic-game environments and rollouts.
//! - [`advantage`]: counterfactual and marginal advantage estimators with
//!   exact enumeration oracles.
//! - [`critic`]: the centralized joint Q critic.
//! - [`optim`]: KL restriction machinery, clipped sub-objectives, and the
//!   full training iteration.
//! - [`harness`]: config, metrics, checkpoints, plots, and the CLI surface.

pub mod advantage;
pub mod critic;
pub mod diffmath;
pub mod envs;
pub mod error;
pub mod harness;
pub mod optim;
pub mod seeding;

pub use error::{Error, Result};
