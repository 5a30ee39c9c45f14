//! Client datasets: partitioners for i.i.d. and skewed splits, a synthetic
//! sensor-style generator, file readers, and distribution diagnostics.

mod distributions;
mod io;
mod partition;
mod synthetic;

pub use distributions::{
    empirical_distributions, empirical_distributions_with, skew_diagnostics, total_variation, BinEdges,
    EmpiricalDistributions, SkewReport, SkewThresholds,
};
pub use io::{load_assignment, load_csv, load_idx, parse_assignment, parse_csv, parse_idx, write_csv};
pub use partition::{
    partition, partition_explicit, partition_feature_skew, partition_iid, partition_label_skew,
    partition_quantity_skew, ClientDataset, FeatureSkew, FeatureTransform, PartitionScheme, PartitionSpec,
    SplitIndices, SplitRatios,
};
pub use synthetic::{generate_synthetic, generate_synthetic_industrial, ClassMetadata, SyntheticData, SyntheticSpec};
