//! Experiment harness, file formats, and CLI plumbing around
//! [`hiergame_core`]: runs solvers against instances and the centralized
//! oracle, records per-round traces, sweeps iteration counts against
//! accuracy targets, and reads/writes the JSON instance and result formats.

pub mod error;
pub mod formats;
pub mod harness;
pub mod trace;

pub use error::CliError;
