//! Parallel spiking units (PSU, IPSU, RPSU): kernels, surrogate gradients,
//! a small trainable network and a parallel-vs-serial benchmark harness.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod grad;
pub mod kernel;
pub mod net;
pub mod verify;

pub use error::{PsuError, Result};
