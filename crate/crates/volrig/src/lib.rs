//! File formats, threading and the command line around `volrig-core`.

pub mod annotations;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod image_io;
pub mod manifest;
pub mod volume_io;

pub use error::{Error, ExitKind, Result};
pub use exec::Parallel;
