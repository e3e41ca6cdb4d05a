//! Joint discovery of low-dimensional action synergies and multi-task
//! latent policies on synthetic manipulator tasks.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffnet`]: tensors, parameter sets, MLPs, diagonal Gaussians and a small
//!   reverse-mode graph over a closed primitive set.
//! - [`envs`]: synthetic manipulator task families with a known optimal-action
//!   subspace.
//! - [`synergy`]: the action decoder, the multi-head latent policy and the
//!   latent discriminator.
//! - [`discorl`]: the entropy-regularised multi-task PPO trainer.
//! - [`baselines`]: sequential PCA / autoencoder synergy extraction.
//! - [`transfer`]: frozen-decoder transfer and the sparse exploration benchmark.
//! - [`cli`]: configuration, seeding, reports and the experiment runner.

pub mod baselines;
pub mod cli;
pub mod diffnet;
pub mod discorl;
pub mod envs;
mod error;
pub mod linalg;
pub mod seeding;
pub mod synergy;
pub mod transfer;

pub use error::{Error, Result};
