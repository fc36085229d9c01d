//! Adversarially robust feature learning on MNIST, self-contained.
//!
//! Two convolutional autoencoders are trained against each other: an
//! attacker that perturbs images without leaving the data manifold, and a
//! defender whose encoder learns features that survive those
//! perturbations. A small classifier head is then trained on the frozen
//! defender features, and a battery of white-box attacks (gradient-based
//! and query-based) measures how robust the result is compared to a
//! conventionally trained twin.
//!
//! Start from the examples:
//!
//! - `gradient_check`: the autodiff engine against finite differences.
//! - `mnist_stats`: dataset sanity numbers straight from the IDX files.
//! - `train_fast`: the whole training pipeline at reduced scale.
//! - `attack_one`: craft an adversarial digit for a trained classifier.
//! - `campaign`: run an attack over the evaluation slice and report.
//! - `deepfool_sweep`: success rate as a function of iteration budget.
//!
//! The `redoubt` binary wraps the same capabilities as subcommands
//! (`train-init`, `train-robust`, `train-baseline`, `train-classifier`,
//! `attack`, `sweep`, `report`).

pub mod attacks;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tape, Tensor, Var};
