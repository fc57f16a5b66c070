//! Configuration, artifact writing and subcommand pipelines behind the
//! `darkcycle` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;
