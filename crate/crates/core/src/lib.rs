//! Attentive graph neural network for zero-shot video object segmentation
//! and image co-segmentation.
//!
//! Frames become nodes of a fully connected graph. Node states are spatial
//! feature grids; edges are attention maps between (or within) grids; a few
//! rounds of gated message passing refine every node before a small
//! convolutional readout produces per-pixel foreground probabilities.
//!
//! The crate carries its own reverse-mode tensor engine ([`engine`]) so the
//! whole model is trained end to end in double precision on synthetic data
//! ([`synth`]) by the loop in [`pipeline`].

pub mod cli;
pub mod encoder;
pub mod engine;
mod error;
pub mod graph;
pub mod head;
pub mod model;
mod params;
pub mod pipeline;
pub mod synth;

pub use encoder::{EncoderConfig, Frame};
pub use error::{Error, Result};
pub use graph::{GraphConfig, VideoGraph};
pub use head::{LossStats, Mask, MaskKind};
pub use model::{Model, ModelConfig, ModelParams};
