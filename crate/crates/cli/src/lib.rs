//! Command line and HTTP front ends over the sparsedoc engine.

pub mod commands;
pub mod ops;
pub mod server;
