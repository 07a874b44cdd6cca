//! Coordinate-network video restoration.
//!
//! A clip is fitted per video from LR-HR pairs. Each output pixel is encoded
//! as a spatial-temporal-texture code per level, looked up in a hashed feature
//! field with learned interpolation, gated top-down across levels and decoded
//! to RGB. The fitted network can then be queried at any output size.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod hash;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pea;
pub mod restorer;
pub mod stt;
pub mod trainer;
pub mod video;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use pea::{LossKind, PeaConfig};
pub use trainer::{Checkpoint, TrainConfig};
pub use video::{Frame, FrameSequence, NoiseSpec};
