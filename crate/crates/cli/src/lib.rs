//! Experiment runner binding data partitioning, federation, optimization
//! regimes and analysis behind one JSON configuration.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;

pub use artifact::{ArtifactKind, CohortOutcome, RunArtifact};
pub use commands::{cmd_analyze, cmd_baselines, cmd_hpo, cmd_partition, cmd_report, prepare};
pub use config::{load_config, parse_config, ExperimentConfig, LoadedConfig};
pub use error::{CliError, CliResult};
