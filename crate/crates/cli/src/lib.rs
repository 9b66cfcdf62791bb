//! Library surface of the `bdt` toolkit: typed errors, file formats, and
//! the subcommand implementations the binary dispatches to.
//!
//! The binary is a thin parser over these modules; tests and downstream
//! tooling can drive the same pipeline through this crate.

pub mod commands;
pub mod errors;
pub mod formats;
