//! File formats, configuration, the synthetic-expert harness and the command
//! line built on top of `graft-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod store;
pub mod trace_io;

pub use error::{Error, Result};
