//! Pin-level circuit graphs, a softmax-attention message-passing encoder and
//! conditional masked autoregressive flow heads for predicting circuit
//! performance metrics.
//!
//! The crate is `no_std` (with `alloc`). File formats, corpus ingestion and
//! the command line live in the `pingnn` crate.
#![no_std]

extern crate alloc;

pub mod circuit;
pub mod dataset;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod maf;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod target;
pub mod train;

pub use scalar::Scalar;
