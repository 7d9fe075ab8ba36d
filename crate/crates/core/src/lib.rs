//! Identification of stochastic multi-object dynamics as linear operators on
//! explicit kernel feature spaces, and quadratic control in those spaces.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`graph`], [`dataset`] | topology, trajectories, on-disk datasets |
//! | [`features`] | random Fourier / polynomial feature maps, action projection, linear decoder |
//! | [`mean_field`] | Boltzmann–Gibbs neighbour weights and weighted aggregation |
//! | [`embedding`] | closed-form estimators for the Tensor, Dense, Hom and Hom+Mean forms |
//! | [`sim`] | rope, power-grid and linear-graph simulators, dataset generation |
//! | [`control`] | finite-horizon feature-space LQR and receding-horizon execution |
//!
//! Every per-node vector is an [`nalgebra::DVector`]; a [`Frame`] holds one
//! vector per node at a single time step.

pub mod control;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod features;
pub mod graph;
pub mod linalg;
pub mod mean_field;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use graph::Graph;

/// Per-node vectors at one time step, indexed by node.
pub type Frame = Vec<nalgebra::DVector<f64>>;
