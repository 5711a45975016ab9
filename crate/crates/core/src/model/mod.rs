//! Network assembly: configuration presets, parameter sets, the forward
//! pass and size accounting.

mod census;
mod config;
mod forward;
mod params;

pub use census::{block_flops, count_flops, count_params, fc_flops, stage_flops, ParamCount, NORM_FLOPS_PER_CHANNEL};
pub use config::{BlockKind, BlockSpec, ModelConfig, NormMode, StageLayout, Variant};
pub use forward::{
    classify_head, embed, forward, forward_observed, infer, infer_fixed, run_stage, run_stage_with, Forward,
    InferenceResult, NumericMode, Phase, RunOptions,
};
pub use params::{tensor_specs, FcBn, HeadParams, ModelParams, StageParams, TensorRole, TensorSpec};
