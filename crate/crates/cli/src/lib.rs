//! Command-line front end and HTTP facade over a data directory.

pub mod cli;
pub mod commands;
pub mod server;
