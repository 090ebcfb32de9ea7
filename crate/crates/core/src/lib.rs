//! Long/short temporal co-teaching for weakly supervised video anomaly
//! detection.
//!
//! Two tubelet-token transformer scorers are trained in alternation: a
//! short-term network that scores single clips and averages them over a
//! subset, and a long-term network that scores several consecutive clips
//! jointly. Each pass optimizes a MIL ranking loss and, once the other
//! network has produced clip-level pseudo labels, a cross-entropy term on
//! those labels.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, reverse-mode graph, gradient checking, AdaGrad
//! - [`model`]: tubelet tokens, 3D relative position bias, the transformer scorer, checkpoints
//! - [`data`]: feature volumes, synthetic generator, feature files and manifests, subset sampling
//! - [`training`]: losses, pseudo labels, training passes and the co-teaching driver
//! - [`evaluation`]: frame-level ROC AUC, score curves, attention rollout
//! - [`cli`]: the `generate` / `train` / `eval` / `score` commands
//!
//! Runnable walkthroughs for each part live under `examples/`.

pub mod cli;
pub mod data;
mod error;
pub mod evaluation;
mod io;
mod seed;
pub mod model;
pub mod parallel;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
