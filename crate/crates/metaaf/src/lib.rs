//! Files, configuration and command line around `metaaf-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod models;
pub mod report;
pub mod selfcheck;
pub mod wav;

pub use error::{Error, Result};
