//! Low-complexity CNN in-loop filter for block-based video coding.
//!
//! The crate covers the whole path from training to filtering:
//!
//! * [`tensor`]: 3×3 standard/depthwise and 1×1 pointwise convolutions with
//!   explicit backward rules.
//! * [`network`]: teacher and student depthwise-separable networks, BN folding,
//!   parameter and MAC accounting.
//! * [`training`]: MSE, attention-transfer and MMD losses, Adam, and the
//!   teacher → hint → fine-tune → fold pipeline.
//! * [`rm`]: frame-level residual mapping with a quantized scale per component,
//!   plus frame- and CTU-level on/off control baselines.
//! * [`codec`]: a toy intra DCT codec, PSNR, BD-rate and padding-impact analysis.
//! * [`io`] and [`commands`]: weight files, raw frames, the evaluation
//!   container, run configuration and the CLI command bodies.

pub mod codec;
pub mod commands;
pub mod error;
pub mod io;
pub mod network;
pub mod rm;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
