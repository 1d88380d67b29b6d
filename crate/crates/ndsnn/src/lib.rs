//! Sparse spiking neural network training with a decreasing-density
//! drop-and-grow regime.
//!
//! The crate is organized around the training pipeline:
//! - [`tensor`]: dense f32 kernels (matmul, conv2d, k-selection),
//! - [`snn`]: LIF forward simulation and surrogate-gradient BPTT,
//! - [`gradcheck`]: forward-mode sensitivity oracle for the BPTT gradients,
//! - [`sparse`]: masks, ERK density allocation, CSR export, memory estimator,
//! - [`scheduler`]: sparsity/death-rate schedules and drop-and-grow updates,
//! - [`data`]: IDX loading, synthetic patterns, spike encoding, batching,
//! - [`trainer`]: the training loop, metrics, and checkpoints,
//! - [`config`]: run configuration and seed streams.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod scheduler;
pub mod snn;
pub mod sparse;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
