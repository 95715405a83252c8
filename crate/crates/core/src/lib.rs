//! Decentralized optimization over directed graphs.
//!
//! The crate simulates the directed decentralized gradient method (Di-DGD)
//! and its dynamic variant (D³GD), in which every agent refines the weights
//! it assigns to its in-neighbors by projected gradient descent on a
//! consensus-error design function. Both a centralized-information and a
//! fully decentralized (tracker-based) weight update are provided.
//!
//! Module map:
//! - [`graph`], [`mixing`], [`spectral`]: digraphs, row-stochastic mixing
//!   matrices and their Perron vector / spectral gap.
//! - [`problems`], [`data`]: local objectives and the synthetic label-skewed
//!   data generator.
//! - [`didgd`]: the Di-DGD transition and its driver.
//! - [`design`]: design function, per-row gradients, simplex projection.
//! - [`engine`]: the D³GD loop with trackers.
//! - [`metrics`]: per-iteration records and convergence diagnostics.
//! - [`harness`]: configuration-driven experiment runner behind the CLI.

pub mod data;
pub mod design;
pub mod didgd;
pub mod engine;
mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod mixing;
pub mod problems;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::DirectedGraph;
pub use mixing::MixingMatrix;
