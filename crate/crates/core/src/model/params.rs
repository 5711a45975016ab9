use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{BlockKind, BlockSpec, ModelConfig, StageLayout};
use crate::error::{Error, Result};
use crate::fixed::Fixed24;
use crate::nn::{BnParams, BranchParams, FcParams, NormParams};
use crate::numeric::Scalar;
use crate::tensor::Matrix;

/// What a tensor holds; drives synthetic initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Weight { fan_in: usize },
    Bias,
    BnScale,
    BnOffset,
    NormAlpha,
    NormBeta,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcBn<T> {
    pub fc: FcParams<T>,
    pub bn: BnParams<T>,
}

impl<T: Scalar> FcBn<T> {
    fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> FcBn<U> {
        FcBn {
            fc: self.fc.map(&mut f),
            bn: self.bn.map(&mut f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams<T> {
    pub layout: StageLayout,
    pub norm: NormParams<T>,
    /// Shared FC-BN-ReLU lifting `[normalized, centroid]` rows to `F_s`.
    pub mlp: FcBn<T>,
    pub pre: Vec<BranchParams<T>>,
    pub pos: Vec<BranchParams<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub hidden: Vec<FcBn<T>>,
    pub out: FcParams<T>,
}

/// Every parameter of a network plus the configuration that shapes it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f64> {
    pub config: ModelConfig,
    pub embedding: FcBn<T>,
    pub stages: Vec<StageParams<T>>,
    pub head: HeadParams<T>,
}

fn push_fc(out: &mut Vec<TensorSpec>, prefix: &str, fin: usize, fout: usize) {
    out.push(TensorSpec {
        name: format!("{prefix}.weight"),
        shape: vec![fout, fin],
        role: TensorRole::Weight { fan_in: fin },
    });
    out.push(TensorSpec {
        name: format!("{prefix}.bias"),
        shape: vec![fout],
        role: TensorRole::Bias,
    });
}

fn push_bn(out: &mut Vec<TensorSpec>, prefix: &str, dim: usize) {
    out.push(TensorSpec {
        name: format!("{prefix}.scale"),
        shape: vec![dim],
        role: TensorRole::BnScale,
    });
    out.push(TensorSpec {
        name: format!("{prefix}.offset"),
        shape: vec![dim],
        role: TensorRole::BnOffset,
    });
}

fn push_block(out: &mut Vec<TensorSpec>, prefix: &str, b: &BlockSpec) {
    let t = usize::from(b.kind == BlockKind::Ode);
    push_fc(out, &format!("{prefix}.fc1"), b.dim + t, b.hidden);
    push_bn(out, &format!("{prefix}.bn1"), b.hidden);
    push_fc(out, &format!("{prefix}.fc2"), b.hidden + t, b.dim);
    push_bn(out, &format!("{prefix}.bn2"), b.dim);
}

/// Canonical, ordered list of every tensor a configuration needs. Weight
/// files, synthetic initialization and parameter counting all follow it.
pub fn tensor_specs(config: &ModelConfig) -> Vec<TensorSpec> {
    let mut out = Vec::new();
    push_fc(&mut out, "embed.fc", 3, config.embed_dim);
    push_bn(&mut out, "embed.bn", config.embed_dim);
    for s in 0..4 {
        let layout = config.stage_layout(s);
        let p = format!("stage{}", s + 1);
        out.push(TensorSpec {
            name: format!("{p}.norm.alpha"),
            shape: vec![layout.in_dim],
            role: TensorRole::NormAlpha,
        });
        out.push(TensorSpec {
            name: format!("{p}.norm.beta"),
            shape: vec![layout.in_dim],
            role: TensorRole::NormBeta,
        });
        push_fc(&mut out, &format!("{p}.mlp.fc"), 2 * layout.in_dim, layout.out_dim);
        push_bn(&mut out, &format!("{p}.mlp.bn"), layout.out_dim);
        for (i, b) in layout.pre.iter().enumerate() {
            push_block(&mut out, &format!("{p}.pre{i}"), b);
        }
        for (i, b) in layout.pos.iter().enumerate() {
            push_block(&mut out, &format!("{p}.pos{i}"), b);
        }
    }
    let mut prev = config.stage_dims[3];
    for (i, &d) in config.head_dims.iter().enumerate() {
        push_fc(&mut out, &format!("head.fc{i}"), prev, d);
        push_bn(&mut out, &format!("head.bn{i}"), d);
        prev = d;
    }
    push_fc(&mut out, "head.out", prev, config.num_classes);
    out
}

struct Cursor<T> {
    items: vec::IntoIter<(TensorSpec, Vec<T>)>,
}

impl<T: Scalar> Cursor<T> {
    fn next(&mut self) -> (TensorSpec, Vec<T>) {
        self.items.next().expect("tensor list shorter than layout")
    }

    fn fc(&mut self) -> FcParams<T> {
        let (spec, w) = self.next();
        let (_, b) = self.next();
        FcParams {
            weight: Matrix::new(spec.shape[0], spec.shape[1], w).expect("shape checked on load"),
            bias: b,
        }
    }

    fn bn(&mut self) -> BnParams<T> {
        let (_, scale) = self.next();
        let (_, offset) = self.next();
        BnParams { scale, offset }
    }

    fn fc_bn(&mut self) -> FcBn<T> {
        FcBn {
            fc: self.fc(),
            bn: self.bn(),
        }
    }

    fn norm(&mut self) -> NormParams<T> {
        let (_, alpha) = self.next();
        let (_, beta) = self.next();
        NormParams {
            alpha,
            beta,
            epsilon: T::from_f64(NormParams::<T>::DEFAULT_EPSILON),
        }
    }

    fn block(&mut self) -> BranchParams<T> {
        BranchParams {
            fc1: self.fc(),
            bn1: self.bn(),
            fc2: self.fc(),
            bn2: self.bn(),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Builds parameters by asking `source` for each tensor in canonical
    /// order. Every returned buffer is checked against its spec.
    pub fn assemble(config: &ModelConfig, mut source: impl FnMut(&TensorSpec) -> Result<Vec<T>>) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(config);
        let mut items = Vec::with_capacity(specs.len());
        for spec in specs {
            let data = source(&spec)?;
            if data.len() != spec.numel() {
                return Err(Error::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    got: vec![data.len()],
                });
            }
            items.push((spec, data));
        }
        let mut cur = Cursor {
            items: items.into_iter(),
        };
        let embedding = cur.fc_bn();
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let layout = config.stage_layout(s);
            let norm = cur.norm();
            let mlp = cur.fc_bn();
            let pre = layout.pre.iter().map(|_| cur.block()).collect();
            let pos = layout.pos.iter().map(|_| cur.block()).collect();
            stages.push(StageParams {
                layout,
                norm,
                mlp,
                pre,
                pos,
            });
        }
        let hidden = config.head_dims.iter().map(|_| cur.fc_bn()).collect();
        let out = cur.fc();
        Ok(Self {
            config: config.clone(),
            embedding,
            stages,
            head: HeadParams { hidden, out },
        })
    }

    /// Every tensor in canonical order, flattened row-major.
    pub fn tensors(&self) -> Vec<(TensorSpec, Vec<T>)> {
        let mut flat: Vec<Vec<T>> = Vec::new();
        let fc = |flat: &mut Vec<Vec<T>>, p: &FcParams<T>| {
            flat.push(p.weight.as_slice().to_vec());
            flat.push(p.bias.clone());
        };
        let bn = |flat: &mut Vec<Vec<T>>, p: &BnParams<T>| {
            flat.push(p.scale.clone());
            flat.push(p.offset.clone());
        };
        fc(&mut flat, &self.embedding.fc);
        bn(&mut flat, &self.embedding.bn);
        for st in &self.stages {
            flat.push(st.norm.alpha.clone());
            flat.push(st.norm.beta.clone());
            fc(&mut flat, &st.mlp.fc);
            bn(&mut flat, &st.mlp.bn);
            for b in st.pre.iter().chain(&st.pos) {
                fc(&mut flat, &b.fc1);
                bn(&mut flat, &b.bn1);
                fc(&mut flat, &b.fc2);
                bn(&mut flat, &b.bn2);
            }
        }
        for h in &self.head.hidden {
            fc(&mut flat, &h.fc);
            bn(&mut flat, &h.bn);
        }
        fc(&mut flat, &self.head.out);
        tensor_specs(&self.config).into_iter().zip(flat).collect()
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            embedding: self.embedding.map(&mut f),
            stages: self
                .stages
                .iter()
                .map(|s| StageParams {
                    layout: s.layout.clone(),
                    norm: s.norm.map(&mut f),
                    mlp: s.mlp.map(&mut f),
                    pre: s.pre.iter().map(|b| b.map(&mut f)).collect(),
                    pos: s.pos.iter().map(|b| b.map(&mut f)).collect(),
                })
                .collect(),
            head: HeadParams {
                hidden: self.head.hidden.iter().map(|h| h.map(&mut f)).collect(),
                out: self.head.out.map(&mut f),
            },
        }
    }

    /// All-zero weights, biases, offsets and scales.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Self::assemble(config, |spec| Ok(vec![T::ZERO; spec.numel()]))
    }
}

impl ModelParams<f64> {
    /// Deterministic synthetic parameters: FC weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases and offsets zero, scales one.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::assemble(config, |spec| {
            let n = spec.numel();
            Ok(match spec.role {
                TensorRole::Weight { fan_in } => {
                    let bound = 1.0 / libm::sqrt(fan_in as f64);
                    let dist = Uniform::new_inclusive(-bound, bound);
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
                TensorRole::Bias | TensorRole::BnOffset | TensorRole::NormBeta => vec![0.0; n],
                TensorRole::BnScale | TensorRole::NormAlpha => vec![1.0; n],
            })
        })
    }

    /// Rounds every parameter into the on-chip fixed-point format.
    pub fn quantize(&self) -> ModelParams<Fixed24> {
        self.map(Fixed24::from_f64)
    }
}
