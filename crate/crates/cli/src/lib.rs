//! Library side of the `tfmlab` command: configuration, command dispatch, and sweeps.

pub mod commands;
pub mod config;
pub mod sweep;
