//! Toy intra codec, frame types, quality metrics and padding analysis.

pub mod dct;
pub mod frame;
pub mod metrics;
pub mod padding;
pub mod synth;
pub mod toy;

pub use dct::{dct8x8, idct8x8};
pub use frame::{chroma_dims, Frame, Plane};
pub use metrics::{bd_rate, psnr, psnr_plane, sse, sse_plane, RdPoint, LOSSLESS_PSNR};
pub use padding::{padding_impact_block, padding_impact_frame, receptive_border, receptive_border_for_depth, BlockImpact};
pub use synth::synthetic_frame;
pub use toy::{estimate_rate, qstep, toy_decode, toy_encode, Coefficients, Encoded, PlaneCoeffs, QP_MAX};
