//! File formats, experiment runner and command-line plumbing around
//! [`tcfa_core`].

pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod model_file;
pub mod pgm;
pub mod pipeline;

pub use config::{Classifier, DataSource, ExperimentConfig};
pub use error::FormatError;
pub use experiment::{run_experiment, ExperimentReport};
