//! Parameter and FLOP accounting.
//!
//! FLOP convention: a multiply-accumulate is 2 FLOPs, so an FC layer on one
//! row costs `2 * in * out + out` (bias). Folded BN is a multiply and an add
//! per element, ReLU and residual additions one op per element, an Euler
//! update `x + h * g` two ops per element. Max-pooling over `K` rows costs
//! `(K - 1)` comparisons per channel, and normalization charges
//! [`NORM_FLOPS_PER_CHANNEL`] per channel of each neighbor row.

use super::config::{BlockKind, BlockSpec, ModelConfig};
use super::params::tensor_specs;

/// Subtract centroid, accumulate mean and variance, divide, scale and shift.
pub const NORM_FLOPS_PER_CHANNEL: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub feature_extractor: u64,
    pub head: u64,
    pub total: u64,
}

/// Exact scalar census over every tensor the model owns.
pub fn count_params(config: &ModelConfig) -> ParamCount {
    let (mut fe, mut head) = (0u64, 0u64);
    for spec in tensor_specs(config) {
        let n = spec.numel() as u64;
        if spec.name.starts_with("head.") {
            head += n;
        } else {
            fe += n;
        }
    }
    ParamCount {
        feature_extractor: fe,
        head,
        total: fe + head,
    }
}

/// FC on a single row, bias included.
pub fn fc_flops(in_dim: usize, out_dim: usize) -> u64 {
    let (i, o) = (in_dim as u64, out_dim as u64);
    2 * i * o + o
}

fn fc_bn_relu_flops(in_dim: usize, out_dim: usize) -> u64 {
    fc_flops(in_dim, out_dim) + 3 * out_dim as u64
}

/// One application of a residual block to one row.
pub fn block_flops(spec: &BlockSpec) -> u64 {
    let (f, h) = (spec.dim, spec.hidden);
    match spec.kind {
        BlockKind::Res => fc_bn_relu_flops(f, h) + fc_flops(h, f) + 2 * f as u64 + f as u64,
        BlockKind::Ode => {
            let per_step = fc_bn_relu_flops(f + 1, h) + fc_flops(h + 1, f) + 2 * f as u64 + 2 * f as u64;
            per_step * spec.iterations as u64
        }
    }
}

/// FLOPs of stage `s` (0-based) given `rows` sampled groups.
pub fn stage_flops(config: &ModelConfig, s: usize, rows: usize) -> u64 {
    let layout = config.stage_layout(s);
    let (rows, k) = (rows as u64, config.group_size as u64);
    let grouped = rows * k;
    let norm = grouped * NORM_FLOPS_PER_CHANNEL * layout.in_dim as u64;
    let mlp = grouped * fc_bn_relu_flops(2 * layout.in_dim, layout.out_dim);
    let pre: u64 = layout.pre.iter().map(block_flops).sum::<u64>() * grouped;
    let pool = rows * k.saturating_sub(1) * layout.out_dim as u64;
    let pos: u64 = layout.pos.iter().map(block_flops).sum::<u64>() * rows;
    norm + mlp + pre + pool + pos
}

/// Total inference FLOPs for an `n_points` cloud.
pub fn count_flops(config: &ModelConfig, n_points: usize) -> u64 {
    let embed = n_points as u64 * fc_bn_relu_flops(3, config.embed_dim);
    let rows = config.stage_rows(n_points);
    let stages: u64 = (0..4).map(|s| stage_flops(config, s, rows[s])).sum();
    let f4 = config.stage_dims[3];
    let global_pool = rows[3].saturating_sub(1) as u64 * f4 as u64;
    let mut head = 0;
    let mut width = f4;
    for &h in &config.head_dims {
        head += fc_bn_relu_flops(width, h);
        width = h;
    }
    head += fc_flops(width, config.num_classes);
    embed + stages + global_pool + head
}
