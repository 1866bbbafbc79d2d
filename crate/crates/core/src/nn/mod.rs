//! Trainable layers, SGD, checkpoints and finite-difference checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;

pub use layers::{Conv2d, ConvBlock, Linear};
pub use optim::{lr_schedule, OptimizerState, SgdConfig};
