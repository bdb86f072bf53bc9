//! File-based pipeline around `loopguard-core`: EMB1 datasets in, models,
//! scores and plot-ready evaluation tables out.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod store;
pub mod synth;

pub use config::{load_config, parse_config, RunConfig};
pub use error::{CliError, Result};
pub use pipeline::{run, Stage};
