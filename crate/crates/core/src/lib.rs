//! Sigmoid networks read as tree-structured probabilistic graphical models.
//!
//! - [`pgm`]: binary factor networks with exact inference.
//! - [`dnn`]: the sigmoid MLP, its loss and exact gradient, and optimizers.
//! - [`unroll`]: the explicit copy-and-replicate tree construction and the
//!   closed-form finite-`L` recursion that tracks it symbolically.
//! - [`samplers`]: the stochastic hidden-unit model with HMC and Gibbs
//!   samplers, and contrastive-divergence fine-tuning.
//! - [`datagen`], [`metrics`], [`experiment`]: synthetic ground-truth data,
//!   calibration metrics, and the train / fine-tune protocol.

pub mod datagen;
pub mod dnn;
pub mod error;
pub mod experiment;
pub mod math;
pub mod metrics;
pub mod pgm;
pub mod rng;
pub mod samplers;
pub mod unroll;

pub use error::{Error, Result};
