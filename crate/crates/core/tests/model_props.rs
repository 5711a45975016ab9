use std::collections::HashMap;

use pointode_core::model::{self, count_flops, count_params, ModelConfig, ModelParams, NormMode, TensorRole, Variant};
use pointode_core::nn::{self, OdeConfig};
use pointode_core::{build_sampling_plan, normalize_unit_sphere, Fixed24, Matrix, NumericMode, PointCloud, SamplingPlan};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    normalize_unit_sphere(&PointCloud::new(pts).unwrap())
}

/// Every tensor random, including biases, offsets and normalization affines.
fn dense_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams::assemble(cfg, |spec| {
        let n = spec.numel();
        let (lo, hi) = match spec.role {
            TensorRole::Weight { fan_in } => {
                let b = 1.0 / (fan_in as f64).sqrt();
                (-b, b)
            }
            TensorRole::Bias | TensorRole::BnOffset | TensorRole::NormBeta => (-0.1, 0.1),
            TensorRole::BnScale | TensorRole::NormAlpha => (0.5, 1.5),
        };
        Ok((0..n).map(|_| rng.gen_range(lo..=hi)).collect())
    })
    .unwrap()
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        stage_dims: [16, 16, 32, 32],
        group_size: 4,
        num_classes: 10,
        head_dims: vec![24, 16],
        ..ModelConfig::elite()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Independent reference: plain loops over named tensors, no shared kernels.

struct Reference<'a> {
    t: HashMap<String, &'a [f64]>,
}

impl<'a> Reference<'a> {
    fn get(&self, name: &str) -> &'a [f64] {
        self.t.get(name).unwrap_or_else(|| panic!("missing {name}"))
    }

    fn fc(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
        let w = self.get(&format!("{prefix}.weight"));
        let b = self.get(&format!("{prefix}.bias"));
        let fin = x.len();
        (0..b.len())
            .map(|o| b[o] + (0..fin).map(|i| w[o * fin + i] * x[i]).sum::<f64>())
            .collect()
    }

    fn bn(&self, prefix: &str, x: &mut [f64], relu: bool) {
        let g = self.get(&format!("{prefix}.scale"));
        let d = self.get(&format!("{prefix}.offset"));
        for i in 0..x.len() {
            x[i] = g[i] * x[i] + d[i];
            if relu && x[i] < 0.0 {
                x[i] = 0.0;
            }
        }
    }

    fn ode(&self, prefix: &str, x: &mut [f64], iters: usize, t0: f64, t1: f64) {
        let h = (t1 - t0) / iters as f64;
        for j in 0..iters {
            let t = t0 + j as f64 * h;
            let mut input = x.to_vec();
            input.push(t);
            let mut a = self.fc(&format!("{prefix}.fc1"), &input);
            self.bn(&format!("{prefix}.bn1"), &mut a, true);
            a.push(t);
            let mut g = self.fc(&format!("{prefix}.fc2"), &a);
            self.bn(&format!("{prefix}.bn2"), &mut g, false);
            for i in 0..x.len() {
                x[i] += h * g[i];
            }
        }
    }

    /// Reordered ODE network: first stage has two blocks splitting the
    /// iterations, the others one block.
    fn forward(&self, cfg: &ModelConfig, pts: &[[f64; 3]], plan: &SamplingPlan) -> (Vec<f64>, Vec<f64>) {
        let mut feat: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| {
                let mut f = self.fc("embed.fc", p);
                self.bn("embed.bn", &mut f, true);
                f
            })
            .collect();
        let c = cfg.ode_iterations;
        for s in 0..4 {
            let g = plan.stage(s);
            let p = format!("stage{}", s + 1);
            let alpha = self.get(&format!("{p}.norm.alpha"));
            let beta = self.get(&format!("{p}.norm.beta"));
            let mut next = Vec::new();
            for r in 0..g.rows() {
                let ids = g.neighbors(r);
                let centre = &feat[ids[0]];
                let mut pooled: Option<Vec<f64>> = None;
                for &n in ids {
                    let d: Vec<f64> = feat[n].iter().zip(centre).map(|(a, b)| a - b).collect();
                    let m = d.iter().sum::<f64>() / d.len() as f64;
                    let sd = (d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d.len() as f64).sqrt();
                    let mut row: Vec<f64> = (0..d.len()).map(|i| alpha[i] * d[i] / (sd + 1e-5) + beta[i]).collect();
                    row.extend_from_slice(centre);
                    let mut y = self.fc(&format!("{p}.mlp.fc"), &row);
                    self.bn(&format!("{p}.mlp.bn"), &mut y, true);
                    pooled = Some(match pooled {
                        None => y,
                        Some(acc) => acc.iter().zip(&y).map(|(a, b)| a.max(*b)).collect(),
                    });
                }
                let mut x = pooled.unwrap();
                if s == 0 {
                    self.ode(&format!("{p}.pos0"), &mut x, c - c / 2, cfg.t_start, cfg.t_end);
                    self.ode(&format!("{p}.pos1"), &mut x, c / 2, cfg.t_start, cfg.t_end);
                } else {
                    self.ode(&format!("{p}.pos0"), &mut x, c, cfg.t_start, cfg.t_end);
                }
                next.push(x);
            }
            feat = next;
        }
        let mut global = feat[0].clone();
        for f in &feat[1..] {
            for (g, v) in global.iter_mut().zip(f) {
                *g = g.max(*v);
            }
        }
        let mut x = global.clone();
        for i in 0..cfg.head_dims.len() {
            x = self.fc(&format!("head.fc{i}"), &x);
            self.bn(&format!("head.bn{i}"), &mut x, true);
        }
        (global, self.fc("head.out", &x))
    }
}

#[test]
fn matches_independent_reference_at_64_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (trial, iters) in [1usize, 3, 4].into_iter().enumerate() {
        let cfg = ModelConfig { ode_iterations: iters, t_end: 0.3, ..toy_config() };
        let params = dense_params(&cfg, trial as u64);
        let tensors = params.tensors();
        let reference = Reference {
            t: tensors.iter().map(|(s, v)| (s.name.clone(), v.as_slice())).collect(),
        };
        let cloud = random_cloud(&mut rng, 64);
        let plan = build_sampling_plan(&cloud, &cfg).unwrap();
        let out = model::infer(&cloud, &plan, &params, NumericMode::Float).unwrap();
        let (global, logits) = reference.forward(&cfg, cloud.points(), &plan);
        assert!(max_abs_diff(&out.global_feature, &global) <= 1e-5);
        assert!(max_abs_diff(&out.logits, &logits) <= 1e-5);
    }
}

// ---------------------------------------------------------------------------
// Stage composed from public kernels, one op at a time.

fn straight_line_stage(
    feat: &Matrix<f64>,
    g: &pointode_core::GroupIndex,
    st: &model::StageParams<f64>,
    cfg: &ModelConfig,
) -> Matrix<f64> {
    let groups: Vec<Matrix<f64>> = (0..g.rows()).map(|r| feat.gather(g.neighbors(r))).collect();
    let centroids = feat.gather(&g.centroid_ids());
    let normed = match cfg.norm_mode {
        NormMode::Pointwise => groups
            .iter()
            .enumerate()
            .map(|(r, m)| nn::pointwise_norm(m, centroids.row(r), &st.norm).unwrap())
            .collect(),
        NormMode::GeometricAffine => nn::geometric_affine(&groups, &centroids, &st.norm).unwrap(),
    };
    let run_block = |x: Vec<f64>, spec: &model::BlockSpec, p: &nn::BranchParams<f64>| match spec.kind {
        model::BlockKind::Res => nn::res_p_block(&x, p).unwrap(),
        model::BlockKind::Ode if spec.iterations == 0 => x,
        model::BlockKind::Ode => {
            nn::ode_p_block(&x, p, &OdeConfig::new(spec.iterations, cfg.t_start, cfg.t_end).unwrap()).unwrap()
        }
    };
    let rows: Vec<Vec<f64>> = normed
        .iter()
        .enumerate()
        .map(|(r, m)| {
            let lifted: Vec<Vec<f64>> = m
                .iter_rows()
                .map(|row| {
                    let mut cat = row.to_vec();
                    cat.extend_from_slice(centroids.row(r));
                    let mut y = nn::bn_relu(&nn::fc(&cat, &st.mlp.fc).unwrap(), &st.mlp.bn, true).unwrap();
                    for (spec, p) in st.layout.pre.iter().zip(&st.pre) {
                        y = run_block(y, spec, p);
                    }
                    y
                })
                .collect();
            let mut x = nn::max_pool(&Matrix::from_rows(st.layout.out_dim, &lifted).unwrap()).unwrap();
            for (spec, p) in st.layout.pos.iter().zip(&st.pos) {
                x = run_block(x, spec, p);
            }
            x
        })
        .collect();
    Matrix::from_rows(st.layout.out_dim, &rows).unwrap()
}

#[test]
fn stages_match_straight_line_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            variant,
            ode_iterations: 3,
            ..match variant {
                Variant::Elite | Variant::PointOde => toy_config(),
                _ => ModelConfig {
                    norm_mode: NormMode::GeometricAffine,
                    reordered: false,
                    bottleneck_ratio: 1,
                    ..toy_config()
                },
            }
        };
        let params = dense_params(&cfg, 4);
        let cloud = random_cloud(&mut rng, 64);
        let plan = build_sampling_plan(&cloud, &cfg).unwrap();
        let mut feat = model::embed(&cloud, &params.embedding).unwrap();
        for s in 0..4 {
            let got = model::run_stage(&feat, plan.stage(s), &params.stages[s], &cfg).unwrap();
            let want = straight_line_stage(&feat, plan.stage(s), &params.stages[s], &cfg);
            assert_eq!(got.shape(), want.shape());
            let err = max_abs_diff(got.as_slice(), want.as_slice());
            assert!(err <= 1e-9, "{variant} stage {s}: {err}");
            feat = got;
        }
    }
}

#[test]
fn zero_network_edge_cases() {
    let cfg = toy_config();
    let mut params = ModelParams::<f64>::zeros(&cfg).unwrap();
    let cloud = random_cloud(&mut ChaCha8Rng::seed_from_u64(1), 32);
    let emb = model::embed(&cloud, &params.embedding).unwrap();
    assert!(emb.as_slice().iter().all(|&v| v == 0.0));

    let tiny = PointCloud::new((0..4).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
    let g = pointode_core::knn(&tiny, &[0], cfg.group_size).unwrap();
    let feat = Matrix::filled(4, cfg.embed_dim, 0.5);
    let out = model::run_stage(&feat, &g, &params.stages[0], &cfg).unwrap();
    assert_eq!(out.shape(), (1, cfg.stage_dims[0]));
    assert!(out.as_slice().iter().all(|&v| v == 0.0));

    let biases: Vec<f64> = (0..cfg.num_classes).map(|i| i as f64 * 0.25 - 1.0).collect();
    params.head.out.bias = biases.clone();
    let plan = build_sampling_plan(&cloud, &cfg).unwrap();
    for mode in [NumericMode::Float, NumericMode::Fixed] {
        let r = model::infer(&cloud, &plan, &params, mode).unwrap();
        assert_eq!(r.logits, biases);
    }
}

#[test]
fn embedding_is_pointwise() {
    let cfg = toy_config();
    let params = dense_params(&cfg, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud = random_cloud(&mut rng, 48);
    let mut perm: Vec<usize> = (0..48).collect();
    perm.shuffle(&mut rng);
    let a = model::embed(&cloud, &params.embedding).unwrap();
    let b = model::embed(&cloud.permuted(&perm).unwrap(), &params.embedding).unwrap();
    assert_eq!(a.gather(&perm), b);
    for (i, p) in cloud.points().iter().enumerate() {
        let y = nn::bn_relu(&nn::fc(p, &params.embedding.fc).unwrap(), &params.embedding.bn, true).unwrap();
        assert_eq!(a.row(i), y.as_slice());
    }
}

#[test]
fn rejects_mismatched_plans() {
    let cfg = toy_config();
    let params = dense_params(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cloud = random_cloud(&mut rng, 64);
    let other = build_sampling_plan(&random_cloud(&mut rng, 32), &cfg).unwrap();
    assert!(model::infer(&cloud, &other, &params, NumericMode::Float).is_err());
    let wrong_k = SamplingPlan::build(&cloud, 3).unwrap();
    assert!(model::infer(&cloud, &wrong_k, &params, NumericMode::Fixed).is_err());
}

#[test]
fn permutation_invariance_on_a_few_clouds() {
    let cfg = toy_config();
    let params = dense_params(&cfg, 5);
    let fixed = params.quantize();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let cloud = random_cloud(&mut rng, 64);
        let plan = build_sampling_plan(&cloud, &cfg).unwrap();
        let a = model::forward(&cloud, &plan, &params).unwrap();
        let af = model::forward(&cloud, &plan, &fixed).unwrap();
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..64).collect();
            perm.shuffle(&mut rng);
            let moved = cloud.permuted(&perm).unwrap();
            let moved_plan = plan.permuted(&perm).unwrap();
            let b = model::forward(&moved, &moved_plan, &params).unwrap();
            assert!(max_abs_diff(&a.global_feature, &b.global_feature) <= 1e-6);
            let bf = model::forward(&moved, &moved_plan, &fixed).unwrap();
            assert_eq!(af.global_feature, bf.global_feature);
        }
    }
}

#[test]
fn threads_do_not_change_results() {
    let cfg = toy_config();
    let params = dense_params(&cfg, 6).quantize();
    let cloud = random_cloud(&mut ChaCha8Rng::seed_from_u64(6), 64);
    let plan = build_sampling_plan(&cloud, &cfg).unwrap();
    let one = model::forward(&cloud, &plan, &params).unwrap();
    let opts = model::RunOptions { threads: 3 };
    let many = model::forward_observed(&cloud, &plan, &params, &opts, &mut |_| {}).unwrap();
    assert_eq!(one, many);
}

#[test]
fn shapes_follow_the_halving_law() {
    for variant in Variant::ALL {
        let cfg = ModelConfig { group_size: 4, ..ModelConfig::preset(variant) };
        let params = ModelParams::build(&cfg, 1).unwrap();
        let cloud = random_cloud(&mut ChaCha8Rng::seed_from_u64(7), 64);
        let plan = build_sampling_plan(&cloud, &cfg).unwrap();
        let out = model::infer(&cloud, &plan, &params, NumericMode::Float).unwrap();
        let mut rows = 64;
        for (s, f) in out.stage_features.iter().enumerate() {
            rows /= 2;
            assert_eq!(f.shape(), (rows, cfg.stage_dims[s]), "{variant}");
        }
        assert_eq!(out.global_feature.len(), cfg.stage_dims[3]);
        assert_eq!(out.logits.len(), cfg.num_classes);
        assert!(out.logits.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn fixed_argmax_agrees_with_float() {
    let cfg = ModelConfig::elite();
    let params = ModelParams::build(&cfg, 17).unwrap();
    let fixed = params.quantize();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut eligible, mut agree) = (0, 0);
    for _ in 0..60 {
        let cloud = random_cloud(&mut rng, 128);
        let plan = build_sampling_plan(&cloud, &cfg).unwrap();
        let a = model::infer(&cloud, &plan, &params, NumericMode::Float).unwrap();
        let b = model::infer_fixed(&cloud, &plan, &fixed).unwrap();
        let mut sorted = a.logits.clone();
        sorted.sort_by(|x, y| y.total_cmp(x));
        if sorted[0] - sorted[1] <= 0.05 {
            continue;
        }
        eligible += 1;
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        if argmax(&a.logits) == argmax(&b.logits) {
            agree += 1;
        }
    }
    assert!(eligible >= 10, "only {eligible} inputs had a clear winner");
    assert!(agree * 100 >= eligible * 98, "{agree}/{eligible}");
}

// ---------------------------------------------------------------------------
// Census

/// Parameter count written out per layer, independent of the tensor list.
fn census_oracle(cfg: &ModelConfig) -> (u64, u64) {
    let fc = |i: usize, o: usize| (i * o + o) as u64;
    let bn = |f: usize| 2 * f as u64;
    let block = |f: usize, h: usize, t: usize| fc(f + t, h) + bn(h) + fc(h + t, f) + bn(f);
    let mut fe = fc(3, cfg.embed_dim) + bn(cfg.embed_dim);
    let mut fin = cfg.embed_dim;
    let ode = cfg.variant != Variant::PointMlpLike;
    for (s, &f) in cfg.stage_dims.iter().enumerate() {
        let h = f / cfg.bottleneck_ratio;
        fe += 2 * fin as u64 + fc(2 * fin, f) + bn(f);
        let blocks = match (ode, cfg.reordered, s) {
            (false, _, _) => 4,
            (true, false, _) | (true, true, 0) => 2,
            (true, true, _) => 1,
        };
        fe += blocks * block(f, h, usize::from(ode));
        fin = f;
    }
    let mut head = 0;
    for &d in &cfg.head_dims {
        head += fc(fin, d) + bn(d);
        fin = d;
    }
    head += fc(fin, cfg.num_classes);
    (fe, head)
}

#[test]
fn census_matches_layer_formula_and_published_ratios() {
    for v in Variant::ALL {
        let cfg = ModelConfig::preset(v);
        let c = count_params(&cfg);
        assert_eq!((c.feature_extractor, c.head), census_oracle(&cfg), "{v}");
        assert_eq!(c.total, c.feature_extractor + c.head);
    }
    let total = |v| count_params(&ModelConfig::preset(v)).total as f64;
    let r1 = total(Variant::PointMlpLike) / total(Variant::Naive);
    let r2 = total(Variant::Naive) / total(Variant::PointOde);
    assert!((r1 / 1.73 - 1.0).abs() <= 0.05, "{r1}");
    assert!((r2 / 1.56 - 1.0).abs() <= 0.05, "{r2}");
    let e = count_params(&ModelConfig::elite());
    assert!((e.feature_extractor as f64 / 0.30e6 - 1.0).abs() <= 0.05);
    assert!((e.total as f64 / 0.58e6 - 1.0).abs() <= 0.10);
    let flops = count_flops(&ModelConfig::elite(), 1024) as f64;
    assert!((flops / 0.64e9 - 1.0).abs() <= 0.20, "{flops}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn census_formula_holds_for_random_configs(
        variant in 0u8..4,
        embed in 1usize..40,
        dims in proptest::array::uniform4(1usize..20),
        ratio in 1usize..4,
        iters in 1usize..9,
        head in proptest::collection::vec(1usize..50, 0..3),
        classes in 1usize..50,
    ) {
        let base = ModelConfig::preset(Variant::from_code(variant).unwrap());
        let cfg = ModelConfig {
            embed_dim: embed,
            stage_dims: dims.map(|d| d * ratio),
            bottleneck_ratio: ratio,
            ode_iterations: iters,
            head_dims: head,
            num_classes: classes,
            ..base
        };
        let c = count_params(&cfg);
        prop_assert_eq!((c.feature_extractor, c.head), census_oracle(&cfg));
        prop_assert_eq!(c.feature_extractor + c.head, ModelParams::<Fixed24>::zeros(&cfg).unwrap().tensors().iter().map(|(_, v)| v.len() as u64).sum::<u64>());
    }
}
