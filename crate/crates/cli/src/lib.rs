//! Library half of the `hetgas` command-line tool.

pub mod commands;
pub mod config;
pub mod exit;
pub mod presets;
