//! Losses, optimizer, patch sampling and the staged training pipeline.

mod adam;
mod band;
mod data;
mod losses;
mod pipeline;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use band::QpBand;
pub use data::{encode_pairs, sample_patches, FramePair, PatchPair, PATCH_ALIGN};
pub use losses::{
    at_loss, at_loss_grad, attention_map, mmd_loss, mmd_loss_grad, mse_loss, mse_loss_grad, normalized_channel_mean,
    AttentionMap, ChannelMean,
};
pub use pipeline::{reconstruction_loss, train_pipeline, EpochRecord, HintLoss, Phase, TrainConfig, TrainReport};
