//! Deterministic simulator for federated primal-dual optimization.
//!
//! The crate bundles the loss families used to study computation-then-aggregation
//! protocols, synthetic and CSV-backed data sharding, the local solvers used by
//! FedPD, the FedAvg / FedProx / FedPD drivers, metrics, and executable
//! certificates for the lower-bound chain and the FedAvg divergence examples.
//!
//! Every run is a pure function of its inputs and seed. Per-agent randomness is
//! drawn from independent ChaCha streams, so agent-parallel execution produces
//! bit-identical results for any thread count.

pub mod algorithms;
pub mod config;
pub mod data;
pub mod error;
pub mod local_solvers;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod theory_checks;
pub mod vector;

pub use error::{Error, Result};
pub use problems::{ChainSpec, LossFamily, Problem, Sample};
pub use vector::ModelVec;
