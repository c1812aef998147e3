//! Group-regularized tree-structured classifiers.
//!
//! A dense network whose final linear layer is learned jointly with soft
//! feature-to-group and class-to-group assignments, then hardened into a
//! block-diagonal split and finetuned so that each class group's logits are
//! produced by its own disjoint set of features.
//!
//! The crate also carries the data generators, evaluation probes and the
//! experiment runner used to compare split networks against an
//! architecture-matched baseline.

pub mod data;
pub mod error;
pub mod experiment;
pub mod grouping;
pub mod probes;
pub mod rng;
pub mod splitnet;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use grouping::{GroupAssignment, RegWeights};
pub use splitnet::SplitPlan;
pub use tensor::{Matrix, NetworkParams, NetworkSpec, TrainConfig};

/// Version string embedded in checkpoints and run reports.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
