//! File formats, configuration, training driver and command-line workflow
//! for the text-guided segmentation model in `mpers-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod report;
pub mod trainer;
pub mod transcript;

pub use self::config::RunConfig;
pub use self::error::{Error, Result};
