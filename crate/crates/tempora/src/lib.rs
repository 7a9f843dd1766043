//! Command-line harness around `tempora-core`: source collection, HTTP model
//! backends, configuration, the run store, pipelines and report tables.

pub use tempora_core as core;

pub mod backends;
pub mod cli;
pub mod collect;
pub mod config;
pub mod correlate;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod store;

pub use error::{Error, Result};
