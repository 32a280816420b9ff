//! On-disk formats and run configuration.

pub mod config;
pub mod container;
pub mod frames;
pub mod weights;

pub use config::{DatasetConfig, FilterConfig, FilterMode, OutputConfig, RunConfig};
pub use container::{decode_stream, encode_stream, SideInfo, Stream, StreamFrame, StreamHeader};
pub use frames::{decode_raw_frames, encode_raw_frames, read_raw_frames, write_raw_frames, RawFormat};
pub use weights::{decode_weights, encode_weights, load_weights, payload_reals, save_weights, weight_file_len};
