//! Batch front end over `superhedge-core`: TOML configs in, TOML reports and
//! CSV convergence sweeps out.

pub mod config;
pub mod parametric;
pub mod run;
pub mod sweep;
