//! File formats, IO and the command-line harness around `anagram-core`.

pub mod archive;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod models;
pub mod png;
pub mod report;

pub use error::LabError;
