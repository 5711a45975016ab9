//! End-to-end feature extraction and classification.
//!
//! Stages process one sampled centroid at a time, exactly like the streaming
//! accelerator: gather the group, normalize each neighbor residual, lift the
//! `[normalized, centroid]` rows with the shared MLP, max-pool, then run the
//! post-pool residual blocks. Only the geometric-affine baseline has to see
//! the whole stage before it can normalize anything.

use alloc::vec;
use alloc::vec::Vec;

use super::config::{BlockKind, BlockSpec, ModelConfig, NormMode};
use super::params::{FcBn, HeadParams, ModelParams, StageParams};
use crate::error::{check_dim, Result};
use crate::fixed::Fixed24;
use crate::geometry::{GroupIndex, PointCloud, SamplingPlan};
use crate::nn::{self, BranchParams, BranchScratch, OdeConfig};
use crate::numeric::Scalar;
use crate::tensor::Matrix;

/// Which arithmetic a forward pass runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NumericMode {
    #[default]
    Float,
    Fixed,
}

/// Progress marker handed to observers after each phase completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Embedding,
    /// 0-based stage index.
    Stage(usize),
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for group-level parallelism. Only honored with the
    /// `std` feature; results are identical for any value.
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { threads: 1 }
    }
}

/// Output of a forward pass in the arithmetic it ran in.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    pub stage_features: Vec<Matrix<T>>,
    pub global_feature: Vec<T>,
    pub logits: Vec<T>,
}

/// Forward-pass output converted to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub stage_features: Vec<Matrix<f64>>,
    pub global_feature: Vec<f64>,
    pub logits: Vec<f64>,
}

impl<T: Scalar> Forward<T> {
    pub fn to_f64(&self) -> InferenceResult {
        InferenceResult {
            stage_features: self.stage_features.iter().map(|m| m.map(T::to_f64)).collect(),
            global_feature: self.global_feature.iter().map(|&v| v.to_f64()).collect(),
            logits: self.logits.iter().map(|&v| v.to_f64()).collect(),
        }
    }
}

/// Per-point FC(3 -> F0) + BN + ReLU.
pub fn embed<T: Scalar>(cloud: &PointCloud, p: &FcBn<T>) -> Result<Matrix<T>> {
    check_dim("embedding input", 3, p.fc.in_dim())?;
    let f0 = p.fc.out_dim();
    let mut out = Matrix::filled(cloud.len(), f0, T::ZERO);
    for (i, pt) in cloud.points().iter().enumerate() {
        let x = pt.map(T::from_f64);
        let row = out.row_mut(i);
        p.fc.apply_into(&x, row);
        p.bn.apply_in_place(row, true);
    }
    Ok(out)
}

fn ode_schedule(config: &ModelConfig, spec: &BlockSpec) -> Option<OdeConfig> {
    (spec.iterations > 0).then(|| OdeConfig {
        iterations: spec.iterations,
        t_start: config.t_start,
        t_end: config.t_end,
    })
}

struct BlockRunner<'a, T> {
    spec: BlockSpec,
    params: &'a BranchParams<T>,
    schedule: Option<OdeConfig>,
    scratch: BranchScratch<T>,
}

impl<'a, T: Scalar> BlockRunner<'a, T> {
    fn new(config: &ModelConfig, spec: BlockSpec, params: &'a BranchParams<T>) -> Self {
        let time_inputs = usize::from(spec.kind == BlockKind::Ode);
        Self {
            spec,
            params,
            schedule: ode_schedule(config, &spec),
            scratch: BranchScratch::new(params, time_inputs),
        }
    }

    fn run(&mut self, x: &mut [T]) {
        match (self.spec.kind, &self.schedule) {
            (BlockKind::Res, _) => nn::res_p_block_in_place(x, self.params, &mut self.scratch),
            (BlockKind::Ode, Some(cfg)) => {
                nn::ode_p_block_in_place(x, self.params, cfg.iterations, cfg, &mut self.scratch)
            }
            (BlockKind::Ode, None) => {}
        }
    }
}

/// Per-stage working state for processing groups one after another.
struct GroupWorker<'a, T: Scalar> {
    params: &'a StageParams<T>,
    in_dim: usize,
    pre: Vec<BlockRunner<'a, T>>,
    pos: Vec<BlockRunner<'a, T>>,
    delta: Vec<T>,
    normed: Vec<T>,
    centroid_acc: Vec<T::Acc>,
    lifted: Matrix<T>,
}

impl<'a, T: Scalar> GroupWorker<'a, T> {
    fn new(config: &ModelConfig, params: &'a StageParams<T>) -> Self {
        let layout = &params.layout;
        let k = config.group_size;
        let runners = |specs: &[BlockSpec], blocks: &'a [BranchParams<T>]| {
            specs
                .iter()
                .zip(blocks)
                .map(|(&s, p)| BlockRunner::new(config, s, p))
                .collect::<Vec<_>>()
        };
        Self {
            params,
            in_dim: layout.in_dim,
            pre: runners(&layout.pre, &params.pre),
            pos: runners(&layout.pos, &params.pos),
            delta: vec![T::ZERO; layout.in_dim],
            normed: vec![T::ZERO; layout.in_dim],
            centroid_acc: vec![T::acc_zero(); layout.out_dim],
            lifted: Matrix::filled(k, layout.out_dim, T::ZERO),
        }
    }

    /// One group through normalization, MLP, pre blocks, max-pool and post
    /// blocks. `normalized` supplies precomputed rows (geometric affine);
    /// otherwise each row is normalized point-wise on the fly.
    fn process(&mut self, features: &Matrix<T>, neighbors: &[usize], centroid: usize, normalized: Option<&Matrix<T>>, out: &mut [T]) {
        let fin = self.in_dim;
        let mlp = &self.params.mlp;
        let c = features.row(centroid);
        // The centroid half of every lifted row is the same product.
        for (acc, w) in self.centroid_acc.iter_mut().zip(mlp.fc.weight.iter_rows()) {
            *acc = T::dot(&w[fin..], c);
        }
        for (r, &n) in neighbors.iter().enumerate() {
            match normalized {
                Some(m) => self.normed.copy_from_slice(m.row(r)),
                None => nn::pointwise_norm_row(features.row(n), c, &self.params.norm, &mut self.delta, &mut self.normed),
            }
            let row = self.lifted.row_mut(r);
            for (((o, w), &b), &cacc) in row
                .iter_mut()
                .zip(mlp.fc.weight.iter_rows())
                .zip(&mlp.fc.bias)
                .zip(&self.centroid_acc)
            {
                *o = T::acc_finish(T::acc_add(T::dot(&w[..fin], &self.normed), cacc), b);
            }
            mlp.bn.apply_in_place(row, true);
            for block in &mut self.pre {
                block.run(row);
            }
        }
        out.copy_from_slice(self.lifted.row(0));
        for row in self.lifted.iter_rows().skip(1) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = o.max(v);
            }
        }
        for block in &mut self.pos {
            block.run(out);
        }
    }
}

fn check_stage<T: Scalar>(features: &Matrix<T>, group: &GroupIndex, params: &StageParams<T>, config: &ModelConfig) -> Result<()> {
    check_dim("stage input width", params.layout.in_dim, features.cols())?;
    check_dim("stage input rows", group.parent_len(), features.rows())?;
    check_dim("stage group size", config.group_size, group.k())?;
    check_dim("stage mlp input", 2 * params.layout.in_dim, params.mlp.fc.in_dim())?;
    check_dim("stage mlp output", params.layout.out_dim, params.mlp.fc.out_dim())?;
    check_dim("stage norm width", params.layout.in_dim, params.norm.dim())?;
    check_dim("stage pre blocks", params.layout.pre.len(), params.pre.len())?;
    check_dim("stage post blocks", params.layout.pos.len(), params.pos.len())
}

/// Runs one stage over all sampled centroids, producing `N_s x F_s` features.
pub fn run_stage<T: Scalar>(features: &Matrix<T>, group: &GroupIndex, params: &StageParams<T>, config: &ModelConfig) -> Result<Matrix<T>> {
    run_stage_with(features, group, params, config, &RunOptions::default())
}

pub fn run_stage_with<T: Scalar>(
    features: &Matrix<T>,
    group: &GroupIndex,
    params: &StageParams<T>,
    config: &ModelConfig,
    opts: &RunOptions,
) -> Result<Matrix<T>> {
    check_stage(features, group, params, config)?;
    let rows = group.rows();
    let normalized = match config.norm_mode {
        NormMode::Pointwise => None,
        NormMode::GeometricAffine => {
            let groups: Vec<Matrix<T>> = (0..rows).map(|j| features.gather(group.neighbors(j))).collect();
            let centroids = features.gather(&group.centroid_ids());
            Some(nn::geometric_affine(&groups, &centroids, &params.norm)?)
        }
    };
    let mut out = Matrix::filled(rows, params.layout.out_dim, T::ZERO);
    let run_rows = |range: core::ops::Range<usize>, dst: &mut [T]| {
        let width = params.layout.out_dim;
        let mut worker = GroupWorker::new(config, params);
        for (j, slot) in range.zip(dst.chunks_exact_mut(width)) {
            let pre = normalized.as_ref().map(|n| &n[j]);
            worker.process(features, group.neighbors(j), group.centroid(j), pre, slot);
        }
    };
    parallel_rows(rows, params.layout.out_dim, opts.threads, &mut out, run_rows);
    Ok(out)
}

#[cfg(feature = "std")]
fn parallel_rows<T: Scalar>(rows: usize, width: usize, threads: usize, out: &mut Matrix<T>, f: impl Fn(core::ops::Range<usize>, &mut [T]) + Sync) {
    let threads = threads.clamp(1, rows.max(1));
    if threads == 1 {
        f(0..rows, out.as_mut_slice());
        return;
    }
    let per = rows.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, chunk) in out.as_mut_slice().chunks_mut(per * width).enumerate() {
            let f = &f;
            let start = t * per;
            scope.spawn(move || f(start..start + chunk.len() / width, chunk));
        }
    });
}

#[cfg(not(feature = "std"))]
fn parallel_rows<T: Scalar>(rows: usize, _width: usize, _threads: usize, out: &mut Matrix<T>, f: impl Fn(core::ops::Range<usize>, &mut [T])) {
    f(0..rows, out.as_mut_slice());
}

pub fn classify_head<T: Scalar>(global: &[T], head: &HeadParams<T>) -> Result<Vec<T>> {
    let mut x = global.to_vec();
    for layer in &head.hidden {
        x = nn::fc(&x, &layer.fc)?;
        layer.bn.apply_in_place(&mut x, true);
    }
    nn::fc(&x, &head.out)
}

/// Full forward pass in the parameters' own arithmetic.
pub fn forward<T: Scalar>(cloud: &PointCloud, plan: &SamplingPlan, params: &ModelParams<T>) -> Result<Forward<T>> {
    forward_observed(cloud, plan, params, &RunOptions::default(), &mut |_| {})
}

pub fn forward_observed<T: Scalar>(
    cloud: &PointCloud,
    plan: &SamplingPlan,
    params: &ModelParams<T>,
    opts: &RunOptions,
    observer: &mut dyn FnMut(Phase),
) -> Result<Forward<T>> {
    let config = &params.config;
    plan.check(cloud.len(), config.group_size)?;
    let mut features = embed(cloud, &params.embedding)?;
    observer(Phase::Embedding);
    let mut stage_features = Vec::with_capacity(4);
    for (s, (stage, group)) in params.stages.iter().zip(plan.stages()).enumerate() {
        features = run_stage_with(&features, group, stage, config, opts)?;
        stage_features.push(features.clone());
        observer(Phase::Stage(s));
    }
    let global_feature = nn::max_pool(&features)?;
    let logits = classify_head(&global_feature, &params.head)?;
    observer(Phase::Head);
    Ok(Forward {
        stage_features,
        global_feature,
        logits,
    })
}

/// Runs inference with float parameters, quantizing them first when `mode`
/// asks for the fixed-point path.
pub fn infer(cloud: &PointCloud, plan: &SamplingPlan, params: &ModelParams<f64>, mode: NumericMode) -> Result<InferenceResult> {
    Ok(match mode {
        NumericMode::Float => forward(cloud, plan, params)?.to_f64(),
        NumericMode::Fixed => forward(cloud, plan, &params.quantize())?.to_f64(),
    })
}

/// Fixed-point inference with pre-quantized parameters.
pub fn infer_fixed(cloud: &PointCloud, plan: &SamplingPlan, params: &ModelParams<Fixed24>) -> Result<InferenceResult> {
    Ok(forward(cloud, plan, params)?.to_f64())
}
