//! Semi-supervised point-cloud segmentation on superpoint graphs.
//!
//! The pipeline partitions a cloud into superpoints, embeds them with a
//! point encoder and a gated graph network, grows sparse superpoint labels
//! along graph edges with a confidence threshold, prunes unreliable pseudo
//! labels by their distance to class centers, and sharpens features with a
//! coupled attention between supervised and extended superpoints.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the
//! command-line driver live in the `sspc` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod cloud;
pub mod embed;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod partition;
pub mod propagate;
pub mod train;

pub use cloud::{gen_synthetic, sample_supervision, PointCloud, SceneSpec, SupervisionMask};
pub use model::{ModelDims, ModelParams};
pub use partition::{build_graph, partition_cloud, superpoint_labels, PartitionParams, Superpoint, SuperpointGraph, SuperpointLabels};
pub use propagate::{Membership, PropagationParams, SupervisionState};
pub use train::{evaluate, predict, train, Metrics, RunLog, Scene, TrainConfig, TrainOutcome};
