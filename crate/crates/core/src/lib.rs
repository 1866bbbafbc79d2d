//! Multi-granularity multi-level feature ensemble networks.
//!
//! A staged convolutional backbone (the *main branch*) is extended with two
//! auxiliary paths built from fixed-position crops of its feature maps:
//!
//! * a **feature-fusion branch** that rebuilds each level's map from
//!   channel-separated crops ([`generators::cs_fg`]) and fuses it with the
//!   previous level through its own convolution stages, and
//! * a **feature-ensemble module** that pools every crop of the last two
//!   levels over all channels ([`generators::fc_fg`]) into two extra heads.
//!
//! The four branch probability vectors are summed to vote on the class.
//! Everything runs on a small reverse-mode tape ([`autograd::Tape`]) over
//! dense `(n, c, h, w)` tensors, generic over `f32`/`f64`.

pub mod anchors;
pub mod config;
pub mod autograd;
pub mod data;
pub mod error;
pub mod generators;
pub mod net;
pub mod nn;
pub mod ops;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use anchors::{Anchor, CropConfig, CropStrategy};
pub use error::{Error, Result};
pub use net::{BackboneConfig, BranchSet, ModelConfig};
pub use scalar::Scalar;

/// 64-bit tensor, the default precision.
pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type MgmlNet = net::MgmlNet<f64>;
pub type MgmlNet32 = net::MgmlNet<f32>;
pub type Tape = autograd::Tape<f64>;
pub type ParamStore = params::ParamStore<f64>;
pub type LabeledSet = data::LabeledSet<f64>;
