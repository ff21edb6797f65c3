//! Real-time stereo matching from a coarse cost volume with learned,
//! edge-aware hierarchical refinement.
//!
//! The crate is self-contained: it carries its own dense [`Tensor`] type and
//! tape-based reverse-mode differentiation ([`autograd`]), the network
//! stages ([`features`], [`cost_volume`], [`refinement`], [`model`]), the
//! training loop ([`training`]), a classical window-matching baseline
//! ([`baseline`]), dataset I/O ([`data`]) and metrics ([`eval`]).

pub mod autograd;
pub mod baseline;
pub mod checkpoint;
pub mod cost_volume;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod refinement;
pub mod tensor;
pub mod training;

pub use autograd::{Param, ParamId, ParamStore, Tape, Var};
pub use cost_volume::{CostVolume, DisparityMap};
pub use error::{Error, Result};
pub use model::{ModelConfig, StereoNet};
pub use tensor::{Real, Tensor};
