//! Deterministic federated-averaging simulator for comparing per-client and
//! in-federation learning-rate optimization.

pub mod analysis;
pub mod data;
pub mod error;
pub mod federation;
pub mod gp;
pub mod hpo;
pub mod nn;
pub mod seed;
pub mod stats;

pub use analysis::{Approach, ResultRow, ResultTable, TTestResult};
pub use data::{ClientDataset, PartitionScheme, PartitionSpec};
pub use error::{Error, Result};
pub use federation::{Cohort, CommStats, EtaSource, FederationConfig, RoundLog};
pub use gp::{GpState, KernelParams};
pub use hpo::{BoConfig, Grid, HpoOutcome, HpoResult, Regime, Strategy, StrategyKind};
pub use nn::{Dataset, ModelSpec, ParamVector, TrainConfig};
