//! Property checks behind `verify` and the acceptance suite. Each check
//! builds its own inputs from a seed and compares the engine against an
//! oracle written independently of the engine's kernels.

use std::fmt;

use pointode_core::geometry::squared_distance;
use pointode_core::model::{self, ModelConfig, ModelParams};
use pointode_core::nn::{self, BnParams, BranchParams, FcParams, OdeConfig};
use pointode_core::pipeline::{default_latencies, simulate, simulate_events, CostModel, StageLatency};
use pointode_core::{
    build_sampling_plan, farthest_point_sample, knn, normalize_unit_sphere, FixedFormat, Fixed24, Matrix, PointCloud,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

pub fn random_unit_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    normalize_unit_sphere(&PointCloud::new(pts).expect("n > 0"))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// End-to-end model properties

#[derive(Debug, Clone, Copy)]
pub struct PermutationStats {
    pub float_max_dev: f64,
    pub fixed_mismatches: usize,
    pub comparisons: usize,
}

/// Global features of permuted clouds, with consistently remapped plans,
/// against the unpermuted run.
pub fn permutation_stats(config: &ModelConfig, seed: u64, clouds: usize, perms: usize, n_points: usize) -> PermutationStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::build(config, seed).expect("preset configs are valid");
    let fixed = params.quantize();
    let mut stats = PermutationStats {
        float_max_dev: 0.0,
        fixed_mismatches: 0,
        comparisons: 0,
    };
    for _ in 0..clouds {
        let cloud = random_unit_cloud(&mut rng, n_points);
        let plan = build_sampling_plan(&cloud, config).expect("plan for a valid cloud");
        let base = model::forward(&cloud, &plan, &params).expect("forward");
        let base_fixed = model::forward(&cloud, &plan, &fixed).expect("forward");
        for _ in 0..perms {
            let mut perm: Vec<usize> = (0..n_points).collect();
            perm.shuffle(&mut rng);
            let moved = cloud.permuted(&perm).expect("valid permutation");
            let moved_plan = plan.permuted(&perm).expect("valid permutation");
            let a = model::forward(&moved, &moved_plan, &params).expect("forward");
            let b = model::forward(&moved, &moved_plan, &fixed).expect("forward");
            stats.float_max_dev = stats.float_max_dev.max(max_abs_diff(&a.global_feature, &base.global_feature));
            if b.global_feature != base_fixed.global_feature {
                stats.fixed_mismatches += 1;
            }
            stats.comparisons += 1;
        }
    }
    stats
}

pub fn permutation_invariance(config: &ModelConfig, seed: u64, clouds: usize, perms: usize, n_points: usize) -> Check {
    let s = permutation_stats(config, seed, clouds, perms, n_points);
    Check::new(
        "permutation invariance",
        s.float_max_dev <= 1e-6 && s.fixed_mismatches == 0,
        format!(
            "{} permutations, float max deviation {:.3e} (limit 1e-6), fixed mismatches {}",
            s.comparisons, s.float_max_dev, s.fixed_mismatches
        ),
    )
}

/// Largest float-vs-fixed logit deviation over random unit-sphere clouds.
pub fn logit_deviation(config: &ModelConfig, seed: u64, clouds: usize, n_points: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::build(config, seed).expect("preset configs are valid");
    let fixed = params.quantize();
    let mut worst: f64 = 0.0;
    for _ in 0..clouds {
        let cloud = random_unit_cloud(&mut rng, n_points);
        let plan = build_sampling_plan(&cloud, config).expect("plan for a valid cloud");
        let a = model::forward(&cloud, &plan, &params).expect("forward").to_f64();
        let b = model::forward(&cloud, &plan, &fixed).expect("forward").to_f64();
        worst = worst.max(max_abs_diff(&a.logits, &b.logits));
    }
    worst
}

// ---------------------------------------------------------------------------
// Residual and ODE blocks

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

fn rand_fc(rng: &mut ChaCha8Rng, fin: usize, fout: usize, bound: f64) -> FcParams<f64> {
    let w = Matrix::new(fout, fin, rand_vec(rng, fin * fout, bound)).expect("sized");
    FcParams::new(w, rand_vec(rng, fout, bound)).expect("sized")
}

fn rand_bn(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> BnParams<f64> {
    BnParams::new(rand_vec(rng, n, bound), rand_vec(rng, n, bound)).expect("sized")
}

fn rand_branch(rng: &mut ChaCha8Rng, f: usize, h: usize, time: usize, bound: f64) -> BranchParams<f64> {
    BranchParams {
        fc1: rand_fc(rng, f + time, h, bound),
        bn1: rand_bn(rng, h, bound),
        fc2: rand_fc(rng, h + time, f, bound),
        bn2: rand_bn(rng, f, bound),
    }
}

/// Copies an FC layer with its last input column dropped (`drop`) or zeroed.
fn strip_last_column(fc: &FcParams<f64>, drop: bool) -> FcParams<f64> {
    let cols = fc.in_dim();
    let keep = if drop { cols - 1 } else { cols };
    let mut data = Vec::with_capacity(fc.out_dim() * keep);
    for row in fc.weight.iter_rows() {
        data.extend_from_slice(&row[..cols - 1]);
        if !drop {
            data.push(0.0);
        }
    }
    FcParams::new(Matrix::new(fc.out_dim(), keep, data).expect("sized"), fc.bias.clone()).expect("sized")
}

/// ODE block with unit step and zeroed time columns against `n` chained
/// residual blocks sharing the same weights. Deviation is relative to the
/// output magnitude (at least 1).
pub fn ode_resnet_fusion(seed: u64, trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let f = rng.gen_range(1..=12);
        let h = rng.gen_range(1..=12);
        let raw = rand_branch(&mut rng, f, h, 1, 1.0);
        let ode = BranchParams {
            fc1: strip_last_column(&raw.fc1, false),
            fc2: strip_last_column(&raw.fc2, false),
            ..raw.clone()
        };
        let res = BranchParams {
            fc1: strip_last_column(&raw.fc1, true),
            fc2: strip_last_column(&raw.fc2, true),
            ..raw
        };
        let x = rand_vec(&mut rng, f, 1.0);
        for n in [1, 2, 4] {
            let cfg = OdeConfig::new(n, 0.0, n as f64).expect("valid schedule");
            let a = nn::ode_p_block(&x, &ode, &cfg).expect("shapes");
            let mut b = x.clone();
            for _ in 0..n {
                b = nn::res_p_block(&b, &res).expect("shapes");
            }
            let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            worst = worst.max(max_abs_diff(&a, &b) / scale);
        }
    }
    Check::new(
        "ode/residual fusion",
        worst <= 1e-6,
        format!("{trials} parameterizations x n in {{1,2,4}}, max deviation {worst:.3e} (limit 1e-6)"),
    )
}

/// Error ratios when doubling the iteration count on smooth dynamics: the
/// hidden pre-activations are kept positive so the vector field is affine.
/// Errors are measured against a 4096-step solution.
pub fn euler_ratios(seed: u64, trials: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::new();
    for _ in 0..trials {
        let (f, h) = (6, 5);
        let mut p = rand_branch(&mut rng, f, h, 1, 0.3);
        p.bn1 = BnParams::new(vec![1.0; h], vec![10.0; h]).expect("sized");
        p.bn2 = BnParams::new(vec![1.0; f], vec![0.0; f]).expect("sized");
        let x = rand_vec(&mut rng, f, 1.0);
        let run = |c| nn::ode_p_block(&x, &p, &OdeConfig::new(c, 0.0, 1.0).expect("valid")).expect("shapes");
        let reference = run(4096);
        let errors: Vec<f64> = [4, 8, 16, 32, 64].iter().map(|&c| max_abs_diff(&run(c), &reference)).collect();
        ratios.extend(errors.windows(2).map(|w| w[0] / w[1]));
    }
    ratios
}

pub fn euler_order(seed: u64, trials: usize) -> Check {
    let ratios = euler_ratios(seed, trials);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Check::new(
        "euler first order",
        ratios.iter().all(|r| (r - 2.0).abs() <= 0.2),
        format!("{} doubling ratios in [{lo:.4}, {hi:.4}] (want 2 +/- 0.2)", ratios.len()),
    )
}

// ---------------------------------------------------------------------------
// Fixed-point arithmetic

/// `round(num / 2^shift)` with ties to even, on plain integers.
fn rne_shift(num: i128, shift: u32) -> i128 {
    let den = 1i128 << shift;
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    if 2 * r > den || (2 * r == den && q % 2 != 0) {
        q + 1
    } else {
        q
    }
}

/// Checks `format`'s add and multiply against exact integer rounding to
/// nearest-even with saturation, and encode error against half an ulp.
/// Passing a format with another rounding mode makes this fail.
pub fn fixed_point_oracle(seed: u64, samples: usize, format: FixedFormat) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = FixedFormat::Q8_16;
    let (lo, hi) = (reference.min_raw() as i128, reference.max_raw() as i128);
    let clamp = |v: i128| v.clamp(lo, hi) as i64;
    let mut bad = 0usize;
    let mut first = None;
    let mut worst_encode: f64 = 0.0;
    for _ in 0..samples {
        let draw = |rng: &mut ChaCha8Rng| match rng.gen_range(0..3) {
            0 => rng.gen_range(lo..=hi) as i64,
            1 => rng.gen_range(-(1i64 << 17)..=1 << 17),
            _ => rng.gen_range(-300..=300),
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let want_mul = clamp(rne_shift(a as i128 * b as i128, 16));
        let want_add = clamp(a as i128 + b as i128);
        let got_mul = format.mul(a, b);
        let fixed_mul = Fixed24::from_raw(a as i32)
            .zip(Fixed24::from_raw(b as i32))
            .map(|(x, y)| x.saturating_mul(y).raw() as i64);
        if got_mul != want_mul || format.add(a, b) != want_add || fixed_mul != Some(want_mul) {
            bad += 1;
            first.get_or_insert((a, b));
        }
        let x = rng.gen_range(-127.0..127.0);
        if let Ok(raw) = format.encode(x) {
            worst_encode = worst_encode.max((format.decode(raw) - x).abs());
        }
    }
    let encode_ok = worst_encode <= 2f64.powi(-17);
    let mut detail = format!(
        "{samples} operand pairs, {bad} mismatches; max encode error {worst_encode:.3e} (limit {:.3e})",
        2f64.powi(-17)
    );
    if let Some((a, b)) = first {
        detail.push_str(&format!("; first mismatch at raw {a} * {b}"));
    }
    Check::new("fixed-point arithmetic", bad == 0 && encode_ok, detail)
}

// ---------------------------------------------------------------------------
// Pipeline

pub fn pipeline_oracle(seed: u64, cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let lat = StageLatency::new([0; 4].map(|_| rng.gen_range(1..=50))).expect("positive");
        let n = rng.gen_range(1..=200);
        let depth = rng.gen_range(1..=4);
        let closed = simulate(n, &lat).expect("n > 0").pipelined_cycles;
        if simulate_events(n, &lat, depth).expect("valid inputs") != closed {
            bad += 1;
        }
    }
    Check::new(
        "pipeline closed form",
        bad == 0,
        format!("{cases} random cases, {bad} disagreements with the event simulation"),
    )
}

/// Modeled speedup of each Elite stage at 1024 input points.
pub fn elite_speedups() -> [f64; 4] {
    let cfg = ModelConfig::elite();
    let rows = cfg.stage_rows(1024);
    let cost = CostModel::default();
    [0, 1, 2, 3].map(|s| {
        let lat = default_latencies(&cfg, s, &cost).expect("stage in range");
        simulate(rows[s] as u64, &lat).expect("rows > 0").speedup
    })
}

pub fn elite_pipeline_speedup() -> Check {
    let sp = elite_speedups();
    Check::new(
        "elite pipeline speedup",
        sp.iter().all(|s| (2.5..=3.5).contains(s)),
        format!("stage speedups {:.3} {:.3} {:.3} {:.3} (want [2.5, 3.5])", sp[0], sp[1], sp[2], sp[3]),
    )
}

// ---------------------------------------------------------------------------
// Geometry

/// Max-min selection from its definition, keeping each point's distance to
/// the selected set; strict `>` keeps the lowest index on ties.
fn fps_oracle(pts: &[[f64; 3]], m: usize) -> Vec<usize> {
    let mut chosen = vec![0];
    let mut taken = vec![false; pts.len()];
    taken[0] = true;
    let mut nearest: Vec<f64> = pts.iter().map(|p| squared_distance(p, &pts[0])).collect();
    while chosen.len() < m {
        let mut best: Option<usize> = None;
        for i in 0..pts.len() {
            if !taken[i] && best.map_or(true, |b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("m <= n");
        chosen.push(pick);
        taken[pick] = true;
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_distance(&pts[i], &pts[pick]));
        }
    }
    chosen
}

/// Full sort by (distance, index), the query moved to the front.
fn knn_oracle(pts: &[[f64; 3]], q: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pts.len()).filter(|&i| i != q).collect();
    order.sort_by(|&a, &b| {
        squared_distance(&pts[a], &pts[q])
            .total_cmp(&squared_distance(&pts[b], &pts[q]))
            .then(a.cmp(&b))
    });
    order.insert(0, q);
    order.truncate(k);
    order
}

/// Random clouds up to `max_n` points; every other cloud sits on a coarse
/// lattice so distance ties are common.
pub fn geometry_oracle(seed: u64, clouds: usize, max_n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fps_bad, mut knn_bad, mut largest) = (0, 0, 0);
    for trial in 0..clouds {
        let n = if trial == 0 { max_n } else { rng.gen_range(1..=max_n) };
        largest = largest.max(n);
        let pts: Vec<[f64; 3]> = if trial % 2 == 0 {
            (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect()
        } else {
            (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-4..=4) as f64 * 0.25)).collect()
        };
        let cloud = PointCloud::new(pts.clone()).expect("n > 0");
        let m = rng.gen_range(1..=n);
        if farthest_point_sample(&cloud, m).expect("m <= n") != fps_oracle(&pts, m) {
            fps_bad += 1;
        }
        let k = rng.gen_range(1..=n.min(32));
        let queries: Vec<usize> = (0..8).map(|_| rng.gen_range(0..n)).collect();
        let groups = knn(&cloud, &queries, k).expect("k <= n");
        if queries
            .iter()
            .enumerate()
            .any(|(row, &q)| groups.neighbors(row) != knn_oracle(&pts, q, k).as_slice())
        {
            knn_bad += 1;
        }
    }
    Check::new(
        "geometry oracles",
        fps_bad == 0 && knn_bad == 0,
        format!("{clouds} clouds up to {largest} points: {fps_bad} FPS and {knn_bad} KNN mismatches"),
    )
}
