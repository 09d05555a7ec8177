//! Stochastic FKPP dynamics on metric graphs: a biased voter model over
//! demes, the conductance random walk on the discretized graph, a
//! semi-discrete interacting-SDE scheme driven by a shared white-noise
//! lattice, and the branching-coalescing dual, with exact small-instance
//! oracles to cross-validate them against each other.

pub mod bvm;
pub mod config;
pub mod dual;
pub mod error;
pub mod exact;
pub mod graph;
pub mod harness;
pub mod rng;
pub mod scaling;
pub mod sde;
pub mod walk;

pub use error::{Error, Result};
