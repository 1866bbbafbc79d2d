//! The full network: main branch, feature-fusion branch, feature-ensemble
//! heads and the probability vote.

mod config;
mod model;
mod plan;

pub use config::{BackboneConfig, BranchSet, ModelConfig, StageConfig, StemConfig, DEFAULT_LAMBDA};
pub use model::{Branch, BranchLogits, BranchOutputs, Features, ForwardTrace, MgmlNet};
pub use plan::{ShapePlan, SpatialShape};
