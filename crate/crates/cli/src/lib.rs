//! Command implementations behind the `looppilot` binary.

pub mod commands;
pub mod repl;
pub mod server;
pub mod ui;
