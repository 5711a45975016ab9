use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Residual MLP baseline: four ResPBlocks per stage.
    PointMlpLike,
    /// Each pair of ResPBlocks replaced by one ODEPBlock, no reordering.
    Naive,
    /// Reordered blocks, one ODEPBlock per stage, point-wise normalization.
    PointOde,
    /// PointOde with reduced widths, a bottleneck and smaller groups.
    Elite,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::PointMlpLike, Variant::Naive, Variant::PointOde, Variant::Elite];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PointMlpLike => "pointmlp-like",
            Variant::Naive => "naive",
            Variant::PointOde => "pointode",
            Variant::Elite => "elite",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::PointMlpLike => 0,
            Variant::Naive => 1,
            Variant::PointOde => 2,
            Variant::Elite => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn block_kind(self) -> BlockKind {
        match self {
            Variant::PointMlpLike => BlockKind::Res,
            _ => BlockKind::Ode,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointmlp-like" | "pointmlp" => Ok(Variant::PointMlpLike),
            "naive" => Ok(Variant::Naive),
            "pointode" => Ok(Variant::PointOde),
            "elite" => Ok(Variant::Elite),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (expected pointmlp-like, naive, pointode or elite)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    Pointwise,
    GeometricAffine,
}

impl NormMode {
    pub fn code(self) -> u8 {
        match self {
            NormMode::Pointwise => 0,
            NormMode::GeometricAffine => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NormMode::Pointwise),
            1 => Some(NormMode::GeometricAffine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Res,
    Ode,
}

/// One residual block in a stage. `iterations` is the Euler step count for
/// ODE blocks (possibly 0 when a split leaves nothing for the second block)
/// and 1 for plain residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub dim: usize,
    pub hidden: usize,
    pub iterations: usize,
}

/// Blocks applied per neighbor row before max-pooling (`pre`) and per group
/// after it (`pos`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub pre: Vec<BlockSpec>,
    pub pos: Vec<BlockSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub stage_dims: [usize; 4],
    /// Hidden width of residual branches is `F_s / bottleneck_ratio`.
    pub bottleneck_ratio: usize,
    pub group_size: usize,
    pub ode_iterations: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub norm_mode: NormMode,
    /// Whether the pre-pool residual blocks are moved after max-pooling.
    pub reordered: bool,
    pub num_classes: usize,
    /// Hidden widths of the classifier head.
    pub head_dims: Vec<usize>,
}

impl ModelConfig {
    pub const DEFAULT_ITERATIONS: usize = 4;
    pub const DEFAULT_T_END: f64 = 0.2;
    pub const DEFAULT_CLASSES: usize = 40;

    pub fn elite() -> Self {
        Self {
            variant: Variant::Elite,
            embed_dim: 32,
            stage_dims: [64, 128, 256, 256],
            bottleneck_ratio: 4,
            group_size: 12,
            ..Self::pointode()
        }
    }

    pub fn pointode() -> Self {
        Self {
            variant: Variant::PointOde,
            embed_dim: 64,
            stage_dims: [128, 256, 512, 1024],
            bottleneck_ratio: 1,
            group_size: 24,
            ode_iterations: Self::DEFAULT_ITERATIONS,
            t_start: 0.0,
            t_end: Self::DEFAULT_T_END,
            norm_mode: NormMode::Pointwise,
            reordered: true,
            num_classes: Self::DEFAULT_CLASSES,
            head_dims: vec![512, 256],
        }
    }

    pub fn naive() -> Self {
        Self {
            variant: Variant::Naive,
            norm_mode: NormMode::GeometricAffine,
            reordered: false,
            ..Self::pointode()
        }
    }

    pub fn pointmlp_like() -> Self {
        Self {
            variant: Variant::PointMlpLike,
            ..Self::naive()
        }
    }

    pub fn preset(variant: Variant) -> Self {
        match variant {
            Variant::PointMlpLike => Self::pointmlp_like(),
            Variant::Naive => Self::naive(),
            Variant::PointOde => Self::pointode(),
            Variant::Elite => Self::elite(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.embed_dim == 0 || self.stage_dims.contains(&0) {
            return bad("feature widths must be positive".into());
        }
        if self.bottleneck_ratio == 0 {
            return bad("bottleneck ratio must be positive".into());
        }
        if let Some(f) = self.stage_dims.iter().find(|&&f| f % self.bottleneck_ratio != 0) {
            return bad(format!(
                "stage width {f} is not divisible by the bottleneck ratio {}",
                self.bottleneck_ratio
            ));
        }
        if self.group_size == 0 {
            return bad("group size must be positive".into());
        }
        if self.ode_iterations == 0 {
            return bad("ODE iterations must be at least 1".into());
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_end > self.t_start) {
            return bad(format!("need finite t_end > t_start, got [{}, {}]", self.t_start, self.t_end));
        }
        if self.num_classes == 0 || self.head_dims.contains(&0) {
            return bad("classifier widths must be positive".into());
        }
        Ok(())
    }

    pub fn block_kind(&self) -> BlockKind {
        self.variant.block_kind()
    }

    /// Input width of stage `s` (0-based).
    pub fn stage_in_dim(&self, s: usize) -> usize {
        if s == 0 {
            self.embed_dim
        } else {
            self.stage_dims[s - 1]
        }
    }

    pub fn stage_out_dim(&self, s: usize) -> usize {
        self.stage_dims[s]
    }

    pub fn hidden_dim(&self, s: usize) -> usize {
        self.stage_dims[s] / self.bottleneck_ratio
    }

    /// Block arrangement of stage `s` (0-based).
    ///
    /// Residual blocks come in two pairs. An ODE block stands in for a pair,
    /// so where a stage keeps two ODE blocks they split the `C` iterations,
    /// the first taking the odd one out. Reordered ODE variants keep a single
    /// block after pooling except in the first stage.
    pub fn stage_layout(&self, s: usize) -> StageLayout {
        let dim = self.stage_out_dim(s);
        let hidden = self.hidden_dim(s);
        let res = BlockSpec {
            kind: BlockKind::Res,
            dim,
            hidden,
            iterations: 1,
        };
        let ode = |iterations| BlockSpec {
            kind: BlockKind::Ode,
            dim,
            hidden,
            iterations,
        };
        let c = self.ode_iterations;
        let (first, second) = (c - c / 2, c / 2);
        let (pre, pos) = match (self.block_kind(), self.reordered) {
            (BlockKind::Res, false) => (vec![res; 2], vec![res; 2]),
            (BlockKind::Res, true) => (vec![], vec![res; 4]),
            (BlockKind::Ode, false) => (vec![ode(first)], vec![ode(second)]),
            (BlockKind::Ode, true) if s == 0 => (vec![], vec![ode(first), ode(second)]),
            (BlockKind::Ode, true) => (vec![], vec![ode(c)]),
        };
        StageLayout {
            in_dim: self.stage_in_dim(s),
            out_dim: dim,
            pre,
            pos,
        }
    }

    /// Rows per stage for an `n`-point input.
    pub fn stage_rows(&self, n: usize) -> [usize; 4] {
        [n / 2, n / 4, n / 8, n / 16]
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::elite()
    }
}
