//! Configuration and stage runners behind the `cra` command-line tool.

pub mod config;
pub mod pipeline;
