//! Per-point neural building blocks, generic over the execution [`Scalar`].
//!
//! Layers operate on single feature vectors (slices) or on small `K x F`
//! groups. Nothing here looks at more than one group at a time except
//! [`geometric_affine`], which needs a statistic over the whole stage.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::numeric::Scalar;
use crate::tensor::Matrix;

/// Fully connected layer `y = W x + b`, `W` being `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> FcParams<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        check_dim("fc bias length", weight.rows(), bias.len())?;
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::filled(out_dim, in_dim, T::ZERO),
            bias: alloc::vec![T::ZERO; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> FcParams<U> {
        FcParams {
            weight: self.weight.map(&mut f),
            bias: self.bias.iter().map(|&b| f(b)).collect(),
        }
    }

    /// Unchecked kernel writing into `out`.
    pub(crate) fn apply_into(&self, x: &[T], out: &mut [T]) {
        for ((o, w), &b) in out.iter_mut().zip(self.weight.iter_rows()).zip(&self.bias) {
            *o = T::acc_finish(T::dot(w, x), b);
        }
    }
}

/// Inference-folded batch norm: `y = scale * x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub scale: Vec<T>,
    pub offset: Vec<T>,
}

impl<T: Scalar> BnParams<T> {
    pub fn new(scale: Vec<T>, offset: Vec<T>) -> Result<Self> {
        check_dim("bn offset length", scale.len(), offset.len())?;
        Ok(Self { scale, offset })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            scale: alloc::vec![T::from_f64(1.0); dim],
            offset: alloc::vec![T::ZERO; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> BnParams<U> {
        BnParams {
            scale: self.scale.iter().map(|&v| f(v)).collect(),
            offset: self.offset.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn apply_in_place(&self, x: &mut [T], relu: bool) {
        for ((v, &g), &d) in x.iter_mut().zip(&self.scale).zip(&self.offset) {
            let y = T::scale_offset(*v, g, d);
            *v = if relu { y.max(T::ZERO) } else { y };
        }
    }
}

impl BnParams<f64> {
    /// Folds running statistics and the affine pair of a trained batch norm:
    /// `scale = weight / sqrt(var + eps)`, `offset = bias - mean * scale`.
    pub fn fold(mean: &[f64], var: &[f64], weight: &[f64], bias: &[f64], eps: f64) -> Result<Self> {
        let n = mean.len();
        check_dim("bn running var length", n, var.len())?;
        check_dim("bn weight length", n, weight.len())?;
        check_dim("bn bias length", n, bias.len())?;
        let mut scale = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n);
        for i in 0..n {
            if var[i] + eps <= 0.0 {
                return Err(Error::Negative("batch-norm variance"));
            }
            let g = weight[i] / libm::sqrt(var[i] + eps);
            scale.push(g);
            offset.push(bias[i] - mean[i] * g);
        }
        Ok(Self { scale, offset })
    }
}

/// Scale/offset pair and guard constant of a normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub alpha: Vec<T>,
    pub beta: Vec<T>,
    pub epsilon: T,
}

impl<T: Scalar> NormParams<T> {
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(alpha: Vec<T>, beta: Vec<T>) -> Result<Self> {
        check_dim("norm beta length", alpha.len(), beta.len())?;
        Ok(Self {
            alpha,
            beta,
            epsilon: T::from_f64(Self::DEFAULT_EPSILON),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            alpha: alloc::vec![T::from_f64(1.0); dim],
            beta: alloc::vec![T::ZERO; dim],
            epsilon: T::from_f64(Self::DEFAULT_EPSILON),
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> NormParams<U> {
        NormParams {
            alpha: self.alpha.iter().map(|&v| f(v)).collect(),
            beta: self.beta.iter().map(|&v| f(v)).collect(),
            epsilon: f(self.epsilon),
        }
    }

    /// `alpha * (delta / (sigma + eps)) + beta` for one residual row.
    fn transform_row(&self, delta: &[T], sigma: T, out: &mut [T]) {
        let denom = sigma.add(self.epsilon);
        for (((o, &d), &a), &b) in out.iter_mut().zip(delta).zip(&self.alpha).zip(&self.beta) {
            *o = T::scale_offset(d.div(denom), a, b);
        }
    }
}

/// Forward Euler schedule over `[t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConfig {
    pub iterations: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl OdeConfig {
    pub fn new(iterations: usize, t_start: f64, t_end: f64) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidConfig("ODE iterations must be at least 1".into()));
        }
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "need finite t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        Ok(Self {
            iterations,
            t_start,
            t_end,
        })
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t_start) / self.iterations as f64
    }

    /// Left endpoint `t_{j-1}` used by iteration `j` (1-based).
    pub fn time_at(&self, j: usize) -> f64 {
        self.t_start + (j - 1) as f64 * self.step()
    }
}

/// Two-stage residual branch shared by both residual block kinds. For the
/// ODE kind, `fc1` is `(F + 1) -> F'` and `fc2` is `(F' + 1) -> F`, the time
/// input being the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams<T> {
    pub fc1: FcParams<T>,
    pub bn1: BnParams<T>,
    pub fc2: FcParams<T>,
    pub bn2: BnParams<T>,
}

pub type ResPBlockParams<T> = BranchParams<T>;
pub type OdePBlockParams<T> = BranchParams<T>;

impl<T: Scalar> BranchParams<T> {
    pub fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> BranchParams<U> {
        BranchParams {
            fc1: self.fc1.map(&mut f),
            bn1: self.bn1.map(&mut f),
            fc2: self.fc2.map(&mut f),
            bn2: self.bn2.map(&mut f),
        }
    }

    /// Checks the `F -> F' -> F` chain; `time_inputs` is 1 for ODE blocks.
    fn check_chain(&self, dim: usize, time_inputs: usize) -> Result<()> {
        let hidden = self.fc1.out_dim();
        check_dim("block fc1 input", dim + time_inputs, self.fc1.in_dim())?;
        check_dim("block bn1 width", hidden, self.bn1.dim())?;
        check_dim("block fc2 input", hidden + time_inputs, self.fc2.in_dim())?;
        check_dim("block fc2 output", dim, self.fc2.out_dim())?;
        check_dim("block bn2 width", dim, self.bn2.dim())
    }

    pub fn dim(&self) -> usize {
        self.fc2.out_dim()
    }
}

pub fn fc<T: Scalar>(x: &[T], p: &FcParams<T>) -> Result<Vec<T>> {
    check_dim("fc input", p.in_dim(), x.len())?;
    let mut out = alloc::vec![T::ZERO; p.out_dim()];
    p.apply_into(x, &mut out);
    Ok(out)
}

pub fn bn_relu<T: Scalar>(x: &[T], p: &BnParams<T>, relu: bool) -> Result<Vec<T>> {
    check_dim("bn input", p.dim(), x.len())?;
    let mut out = x.to_vec();
    p.apply_in_place(&mut out, relu);
    Ok(out)
}

/// Appends the ODE time as the last element.
pub fn concat_t<T: Scalar>(x: &[T], t: T) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len() + 1);
    out.extend_from_slice(x);
    out.push(t);
    out
}

/// Point-wise normalization of one group. Each neighbor row's residual
/// `f_k - centroid` is standardized by the population standard deviation of
/// its own elements; rows never influence one another.
pub fn pointwise_norm<T: Scalar>(group: &Matrix<T>, centroid: &[T], p: &NormParams<T>) -> Result<Matrix<T>> {
    if group.rows() == 0 {
        return Err(Error::Empty("group"));
    }
    check_dim("group feature width", centroid.len(), group.cols())?;
    check_dim("norm parameter width", p.dim(), group.cols())?;
    let f = group.cols();
    let mut out = Matrix::filled(group.rows(), f, T::ZERO);
    let mut delta = alloc::vec![T::ZERO; f];
    for r in 0..group.rows() {
        pointwise_norm_row(group.row(r), centroid, p, &mut delta, out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn pointwise_norm_row<T: Scalar>(
    row: &[T],
    centroid: &[T],
    p: &NormParams<T>,
    delta: &mut [T],
    out: &mut [T],
) {
    for ((d, &x), &c) in delta.iter_mut().zip(row).zip(centroid) {
        *d = x.sub(c);
    }
    let sigma = T::centered_rms(delta, delta.len(), 1);
    p.transform_row(delta, sigma, out);
}

/// Geometric affine transform: like [`pointwise_norm`] but with one standard
/// deviation taken over every residual of every group in the stage, around
/// the stage-wide mean residual vector.
pub fn geometric_affine<T: Scalar>(groups: &[Matrix<T>], centroids: &Matrix<T>, p: &NormParams<T>) -> Result<Vec<Matrix<T>>> {
    if groups.is_empty() {
        return Err(Error::Empty("stage tensor"));
    }
    check_dim("centroid count", groups.len(), centroids.rows())?;
    let f = centroids.cols();
    check_dim("norm parameter width", p.dim(), f)?;
    let mut residuals = Vec::new();
    for (j, g) in groups.iter().enumerate() {
        if g.rows() == 0 {
            return Err(Error::Empty("group"));
        }
        check_dim("group feature width", f, g.cols())?;
        let c = centroids.row(j);
        for row in g.iter_rows() {
            residuals.extend(row.iter().zip(c).map(|(&x, &m)| x.sub(m)));
        }
    }
    let total_rows = residuals.len() / f;
    let sigma = T::centered_rms(&residuals, total_rows, f);
    let mut out = Vec::with_capacity(groups.len());
    let mut cursor = residuals.chunks_exact(f);
    for g in groups {
        let mut m = Matrix::filled(g.rows(), f, T::ZERO);
        for r in 0..g.rows() {
            let delta = cursor.next().expect("one residual per row");
            p.transform_row(delta, sigma, m.row_mut(r));
        }
        out.push(m);
    }
    Ok(out)
}

pub fn max_pool<T: Scalar>(group: &Matrix<T>) -> Result<Vec<T>> {
    if group.rows() == 0 {
        return Err(Error::Empty("group"));
    }
    let mut out = group.row(0).to_vec();
    for row in group.iter_rows().skip(1) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

/// `x + BN2(FC2(ReLU(BN1(FC1(x)))))`.
pub fn res_p_block<T: Scalar>(x: &[T], p: &ResPBlockParams<T>) -> Result<Vec<T>> {
    p.check_chain(x.len(), 0)?;
    let mut out = x.to_vec();
    let mut scratch = BranchScratch::new(p, 0);
    res_p_block_in_place(&mut out, p, &mut scratch);
    Ok(out)
}

/// Forward Euler integration of the block's dynamics, reusing the same
/// parameters on every step:
/// `h_j = h_{j-1} + step * BN2(FC2([ReLU(BN1(FC1([h_{j-1}, t_{j-1}]))), t_{j-1}]))`.
pub fn ode_p_block<T: Scalar>(x: &[T], p: &OdePBlockParams<T>, cfg: &OdeConfig) -> Result<Vec<T>> {
    p.check_chain(x.len(), 1)?;
    let mut out = x.to_vec();
    let mut scratch = BranchScratch::new(p, 1);
    ode_p_block_in_place(&mut out, p, cfg.iterations, cfg, &mut scratch);
    Ok(out)
}

/// Reusable buffers for block evaluation.
pub(crate) struct BranchScratch<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    branch: Vec<T>,
}

impl<T: Scalar> BranchScratch<T> {
    pub(crate) fn new(p: &BranchParams<T>, time_inputs: usize) -> Self {
        let hidden = p.fc1.out_dim();
        Self {
            input: alloc::vec![T::ZERO; p.fc1.in_dim()],
            hidden: alloc::vec![T::ZERO; hidden + time_inputs],
            branch: alloc::vec![T::ZERO; p.dim()],
        }
    }
}

pub(crate) fn res_p_block_in_place<T: Scalar>(x: &mut [T], p: &ResPBlockParams<T>, s: &mut BranchScratch<T>) {
    let h = p.fc1.out_dim();
    p.fc1.apply_into(x, &mut s.hidden[..h]);
    p.bn1.apply_in_place(&mut s.hidden[..h], true);
    p.fc2.apply_into(&s.hidden[..h], &mut s.branch);
    p.bn2.apply_in_place(&mut s.branch, false);
    for (v, &b) in x.iter_mut().zip(&s.branch) {
        *v = v.add(b);
    }
}

/// Runs `iterations` Euler steps of the schedule `cfg` (whose own iteration
/// count fixes the step size).
pub(crate) fn ode_p_block_in_place<T: Scalar>(
    x: &mut [T],
    p: &OdePBlockParams<T>,
    iterations: usize,
    cfg: &OdeConfig,
    s: &mut BranchScratch<T>,
) {
    let f = x.len();
    let h = p.fc1.out_dim();
    let step = T::from_f64(cfg.step());
    for j in 1..=iterations {
        let t = T::from_f64(cfg.time_at(j));
        s.input[..f].copy_from_slice(x);
        s.input[f] = t;
        p.fc1.apply_into(&s.input, &mut s.hidden[..h]);
        p.bn1.apply_in_place(&mut s.hidden[..h], true);
        s.hidden[h] = t;
        p.fc2.apply_into(&s.hidden, &mut s.branch);
        p.bn2.apply_in_place(&mut s.branch, false);
        for (v, &b) in x.iter_mut().zip(&s.branch) {
            *v = T::scale_offset(b, step, *v);
        }
    }
}
