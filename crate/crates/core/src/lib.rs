//! Entropy of discrete causal fermion systems.

pub mod configuration;
pub mod entropy;
pub mod error;
pub mod group;
pub mod lagrangian;
pub mod linalg;
pub mod local;
pub mod operator;
pub mod rng;
pub mod slice;
pub mod stats;
pub mod surface_layer;

pub use error::{CfsError, Result};
