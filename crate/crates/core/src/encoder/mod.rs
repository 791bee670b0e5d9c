//! Flat ViT encoder: patch embedding, pre-norm blocks, shared classifier head.

pub mod block;
pub mod checkpoint;
mod config;
pub mod model;
mod params;
mod patch;

pub use block::{block_backward, block_forward, msa_forward, vanilla_block_forward, BlockTrace, SlowFastPlan};
pub use config::EncoderConfig;
pub use model::{
    backward, classify, embed, forward_traced, model_forward_vanilla, AttentionRecord, DenseRouter,
    LayerRouter, ModelOutput, ModelTrace,
};
pub use params::{LayerParams, ModelParams};
pub use patch::{patchify, Image, TokenSequence};
