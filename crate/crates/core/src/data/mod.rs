//! Datasets, non-IID partitioning and seeded generators.

pub mod dataset;
pub mod partition;
pub mod synth;
pub mod toy;

pub use dataset::Dataset;
pub use partition::{dirichlet_partition, PartitionSpec};
pub use synth::{synth_classification, synth_split, SynthKind, SynthSpec};
pub use toy::{cluster_panels, make_two_cluster_toy, ClusterPanels};
