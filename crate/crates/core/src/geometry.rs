//! Host-side preprocessing: unit-sphere normalization, farthest point
//! sampling, K-nearest-neighbor grouping, and the four-stage sampling plan
//! that feeds the feature extractor.
//!
//! Everything here is deterministic. Distances are compared squared and every
//! tie is broken toward the lower point index.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub type Point = [f64; 3];

/// A non-empty set of 3D points with finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        if let Some(&bad) = points.iter().flatten().find(|c| !c.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn gather(&self, ids: &[usize]) -> PointCloud {
        PointCloud {
            points: ids.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Reorders points so that `result[i] == self[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<PointCloud> {
        check_permutation(perm, self.len())?;
        Ok(self.gather(perm))
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for (acc, v) in c.iter_mut().zip(p) {
                *acc += v;
            }
        }
        c.map(|v| v / n)
    }
}

#[inline]
pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Centers the cloud on its centroid and scales it so the farthest point lies
/// on the unit sphere. A cloud whose points all coincide maps to the origin.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let mut points: Vec<Point> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max_sq = points
        .iter()
        .map(|p| squared_distance(p, &[0.0; 3]))
        .fold(0.0, f64::max);
    let scale = libm::sqrt(max_sq);
    if scale > 0.0 {
        for p in &mut points {
            for v in p.iter_mut() {
                *v /= scale;
            }
        }
    } else {
        points.iter_mut().for_each(|p| *p = [0.0; 3]);
    }
    PointCloud { points }
}

/// Greedy farthest point sampling seeded at index 0.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    farthest_point_sample_from(cloud, m, 0)
}

/// Greedy farthest point sampling from an explicit seed. Each step picks the
/// point with the largest squared distance to the already selected set, the
/// lowest index winning ties. Output is in selection order.
pub fn farthest_point_sample_from(cloud: &PointCloud, m: usize, seed: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::OutOfRange {
            name: "sample count",
            value: m,
            range: format!("1..={n}"),
        });
    }
    if seed >= n {
        return Err(Error::OutOfRange {
            name: "seed index",
            value: seed,
            range: format!("0..{n}"),
        });
    }
    let pts = cloud.points();
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = seed;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            break;
        }
        let anchor = pts[current];
        let mut best = usize::MAX;
        let mut best_dist = f64::NEG_INFINITY;
        for (i, (p, d)) in pts.iter().zip(min_dist.iter_mut()).enumerate() {
            let nd = squared_distance(p, &anchor);
            if nd < *d {
                *d = nd;
            }
            if !taken[i] && *d > best_dist {
                best_dist = *d;
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// Per-centroid neighbor table for one stage: `rows x k` indices into the
/// parent point set. Column 0 of every row is the centroid itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    parent_len: usize,
    k: usize,
    neighbor_ids: Vec<usize>,
}

impl GroupIndex {
    /// Validates a raw neighbor table. The centroid of each row is its first entry.
    pub fn from_table(parent_len: usize, k: usize, neighbor_ids: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Empty("neighbor row"));
        }
        if neighbor_ids.len() % k != 0 {
            return Err(Error::PlanMismatch(format!(
                "{} indices do not form rows of {k}",
                neighbor_ids.len()
            )));
        }
        if let Some(&bad) = neighbor_ids.iter().find(|&&i| i >= parent_len) {
            return Err(Error::OutOfRange {
                name: "neighbor index",
                value: bad,
                range: format!("0..{parent_len}"),
            });
        }
        Ok(Self {
            parent_len,
            k,
            neighbor_ids,
        })
    }

    pub fn rows(&self) -> usize {
        self.neighbor_ids.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn parent_len(&self) -> usize {
        self.parent_len
    }

    pub fn centroid(&self, row: usize) -> usize {
        self.neighbor_ids[row * self.k]
    }

    pub fn centroid_ids(&self) -> Vec<usize> {
        (0..self.rows()).map(|r| self.centroid(r)).collect()
    }

    pub fn neighbors(&self, row: usize) -> &[usize] {
        &self.neighbor_ids[row * self.k..(row + 1) * self.k]
    }

    pub fn table(&self) -> &[usize] {
        &self.neighbor_ids
    }

    fn remapped(&self, new_index: &[usize]) -> Self {
        Self {
            parent_len: self.parent_len,
            k: self.k,
            neighbor_ids: self.neighbor_ids.iter().map(|&i| new_index[i]).collect(),
        }
    }
}

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` nearest points to each query. The query point itself leads every
/// row; the remaining `k - 1` follow in (distance, index) order.
pub fn knn(cloud: &PointCloud, query_ids: &[usize], k: usize) -> Result<GroupIndex> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::OutOfRange {
            name: "k",
            value: k,
            range: format!("1..={n}"),
        });
    }
    let pts = cloud.points();
    let mut table = Vec::with_capacity(query_ids.len() * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &q in query_ids {
        if q >= n {
            return Err(Error::OutOfRange {
                name: "query index",
                value: q,
                range: format!("0..{n}"),
            });
        }
        table.push(q);
        if k == 1 {
            continue;
        }
        let anchor = pts[q];
        cand.clear();
        cand.extend(
            pts.iter()
                .enumerate()
                .filter(|&(i, _)| i != q)
                .map(|(i, p)| (squared_distance(p, &anchor), i)),
        );
        let want = k - 1;
        if want < cand.len() {
            cand.select_nth_unstable_by(want - 1, by_distance);
            cand.truncate(want);
        }
        cand.sort_unstable_by(by_distance);
        table.extend(cand.iter().map(|&(_, i)| i));
    }
    GroupIndex::from_table(n, k, table)
}

/// Precomputed grouping indices for the four extractor stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPlan {
    stages: Vec<GroupIndex>,
}

impl SamplingPlan {
    pub const STAGES: usize = 4;

    /// Assembles a plan from per-stage tables, checking that each stage's
    /// parent is the previous stage's centroid set.
    pub fn from_stages(stages: Vec<GroupIndex>) -> Result<Self> {
        if stages.len() != Self::STAGES {
            return Err(Error::PlanMismatch(format!(
                "expected {} stages, got {}",
                Self::STAGES,
                stages.len()
            )));
        }
        for (s, pair) in stages.windows(2).enumerate() {
            if pair[1].parent_len() != pair[0].rows() {
                return Err(Error::PlanMismatch(format!(
                    "stage {} indexes {} parents but stage {} has {} rows",
                    s + 2,
                    pair[1].parent_len(),
                    s + 1,
                    pair[0].rows()
                )));
            }
        }
        Ok(Self { stages })
    }

    /// Recursive FPS + KNN: stage `s` samples half of the stage `s - 1`
    /// points and groups each sample with its `k` nearest neighbors. Stage
    /// coordinates are the gathered centroid coordinates.
    pub fn build(cloud: &PointCloud, k: usize) -> Result<Self> {
        let n = cloud.len();
        if n % (1 << Self::STAGES) != 0 {
            return Err(Error::InvalidConfig(format!(
                "point count {n} must be divisible by {} for four halvings",
                1 << Self::STAGES
            )));
        }
        let mut coords = cloud.clone();
        let mut stages = Vec::with_capacity(Self::STAGES);
        for _ in 0..Self::STAGES {
            let m = coords.len() / 2;
            if k > coords.len() {
                return Err(Error::InvalidConfig(format!(
                    "group size {k} exceeds the {} points available at this stage",
                    coords.len()
                )));
            }
            let centroids = farthest_point_sample(&coords, m)?;
            stages.push(knn(&coords, &centroids, k)?);
            coords = coords.gather(&centroids);
        }
        Self::from_stages(stages)
    }

    pub fn stages(&self) -> &[GroupIndex] {
        &self.stages
    }

    pub fn stage(&self, s: usize) -> &GroupIndex {
        &self.stages[s]
    }

    pub fn input_len(&self) -> usize {
        self.stages[0].parent_len()
    }

    /// Rewrites the plan for a cloud permuted so that `new[i] == old[perm[i]]`.
    /// Only the first stage references input indices; later stages index the
    /// previous stage's centroid rows, whose order is unchanged.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.input_len())?;
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut stages = self.stages.clone();
        stages[0] = stages[0].remapped(&inverse);
        Ok(Self { stages })
    }

    /// Checks that this plan fits a cloud of `n` points and group size `k`.
    pub fn check(&self, n: usize, k: usize) -> Result<()> {
        if self.input_len() != n {
            return Err(Error::PlanMismatch(format!(
                "plan built for {} points, cloud has {n}",
                self.input_len()
            )));
        }
        let mut parent = n;
        for (s, g) in self.stages.iter().enumerate() {
            if g.k() != k {
                return Err(Error::PlanMismatch(format!(
                    "stage {} groups {} neighbors, model expects {k}",
                    s + 1,
                    g.k()
                )));
            }
            if g.rows() != parent / 2 {
                return Err(Error::PlanMismatch(format!(
                    "stage {} has {} rows, expected {}",
                    s + 1,
                    g.rows(),
                    parent / 2
                )));
            }
            parent = g.rows();
        }
        Ok(())
    }
}

/// Builds the sampling plan for a model configuration.
pub fn build_sampling_plan(cloud: &PointCloud, config: &ModelConfig) -> Result<SamplingPlan> {
    SamplingPlan::build(cloud, config.group_size)
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            what: "permutation length",
            expected: n,
            got: perm.len(),
        });
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidConfig(format!("not a permutation of 0..{n}")));
        }
        seen[p] = true;
    }
    Ok(())
}
