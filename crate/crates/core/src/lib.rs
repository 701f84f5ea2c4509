//! Unsupervised domain adaptation for gait recognition at desk scale.
//!
//! The crate implements the full fine-tuning loop on top of a small
//! trainable encoder: density-based pseudo-labels with a per-epoch
//! threshold schedule, noise-weighted cluster centroids, confidence-based
//! and teacher-guided label refinement, and a soft-target InfoNCE
//! objective against a momentum-updated centroid memory bank. Synthetic
//! generators and clustering/retrieval metrics make every stage testable
//! against ground truth without any real gait dataset.

pub mod clustering;
pub mod encoder;
pub mod labels;
pub mod loss;
pub mod membank;
pub mod metrics;
pub mod pipeline;
pub mod silhouette;
pub mod synthgen;
pub mod tensorfile;

pub use clustering::{ClusterAssignment, DcpSchedule, DensityWeights, Label};
pub use encoder::{AdamState, EmbeddingMatrix, EncoderParams, GaitEnergyInput};
pub use labels::{ConfidenceMatrix, LatentClusterEntry, SoftLabel};
pub use loss::LossReport;
pub use membank::MemoryBank;
pub use metrics::EvalReport;
pub use pipeline::{RunConfig, RunLog, Toggles};
pub use silhouette::{RegionPartition, SilhouetteFrame, SilhouetteSequence};
pub use synthgen::{GroundTruth, SynthSpec};
