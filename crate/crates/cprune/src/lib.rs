//! Model files, CSV/JSON artifacts, reports and the command line on top of
//! `cprune-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod model_file;
pub mod report;

pub use error::CliError;
pub use model_file::{parse_model, serialize_model, ModelFileError};
pub use report::{compute_gain, Direction, GainReport};
