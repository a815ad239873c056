//! Experiment configuration, persistence, result files and the CLI commands.

pub mod codec;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;
pub mod results;
