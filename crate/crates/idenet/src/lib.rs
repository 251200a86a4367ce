//! File formats, checkpoints, parallel experiment grids and the command-line
//! pipeline around `idenet-core`.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod files;
pub mod reason;
pub mod suite;

pub use error::{Error, Result};
