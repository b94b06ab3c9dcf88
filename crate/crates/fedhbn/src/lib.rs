//! IO, file formats and the command-line harness around `fedhbn-core`.

pub mod checkpoint;
pub mod cifar;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod metrics;
pub mod oracle_check;
pub mod sweep;
pub mod toy;

pub use error::{Error, Result};
