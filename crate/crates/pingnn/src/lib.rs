//! File formats, corpus ingestion, reporting and the command line for
//! [`pingnn_core`].

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod par;
pub mod pgf;
pub mod pipeline;
pub mod report;
pub mod schema;
pub mod selftest;

pub use error::{Error, Result};
