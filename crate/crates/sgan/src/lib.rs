//! Ensemble-supervised adversarial training on 2-D toy distributions.
//!
//! A "global" generator/discriminator pair is trained against an ensemble of
//! N independently trained "local" adversarial pairs. The global generator
//! learns from per-iteration clones of the local discriminators (so the local
//! pairs are never touched by the global phase), and the global discriminator
//! learns directly from the local generators.
//!
//! The crate is organised as:
//! - [`nn`] — small fully connected networks with reverse-mode differentiation
//!   (including double-backprop through input-gradient norms) and
//!   Adam/RMSProp optimizers;
//! - [`objectives`] — vanilla GAN, WGAN-GP and DRAGAN-style losses and
//!   single-step update rules;
//! - [`data`] — analytic toy distributions (circle/grid Gaussian mixtures,
//!   Swiss Roll) and seeded sample streams;
//! - [`ensemble`] — the training orchestrator (local phase, messenger clones,
//!   global updates, simplified and paired-baseline variants);
//! - [`metrics`] — mode coverage, KDE log-likelihood, entropy/TV, level-set
//!   grids, uncovered-mode curves;
//! - [`cli`] — the experiment runner: config parsing, seed derivation, run
//!   orchestration, checkpoints and artifact emission.

pub mod cli;
pub mod data;
pub mod ensemble;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod tensor;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum SganError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got} in {context}")]
    Shape {
        expected: String,
        got: String,
        context: String,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("training error at iteration {iteration}, pair {pair_index}: {message}")]
    Training {
        iteration: u64,
        pair_index: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SganError>;
