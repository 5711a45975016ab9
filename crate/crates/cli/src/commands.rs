use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use pointode_core::model::{self, count_flops, count_params, ModelConfig, ModelParams, Phase, RunOptions, Variant};
use pointode_core::pipeline::{default_latencies, simulate, simulate_events, CostModel, PipelineReport, StageLatency};
use pointode_core::{build_sampling_plan, normalize_unit_sphere, FixedFormat, InferenceResult, PointCloud, Rounding, SamplingPlan};

use crate::checks;
use crate::cloud::{read_cloud, read_plan_file, write_plan};
use crate::error::CliError;
use crate::output::write_features;
use crate::weights::{load_weights, save_weights};

#[derive(Debug, Parser)]
#[command(name = "pointode", version, about = "Point-cloud feature extraction with ODE-compressed residual networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract final-stage features from a point cloud.
    Extract(ExtractArgs),
    /// Print the top-5 classes for a point cloud.
    Classify(ModelArgs),
    /// Parameter and FLOP census of a preset.
    Count(CountArgs),
    /// Model the four-step streaming pipeline of one stage.
    Simulate(SimulateArgs),
    /// Run the invariant suite and report each property.
    Verify(VerifyArgs),
    /// Precompute the sampling plan (FPS + KNN indices) of a cloud.
    Plan(PlanArgs),
    /// Write synthetic weights for a preset.
    Init(InitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Numeric {
    Float,
    Fixed,
}

impl Numeric {
    fn other(self) -> Self {
        match self {
            Numeric::Float => Numeric::Fixed,
            Numeric::Fixed => Numeric::Float,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Numeric::Float => "float",
            Numeric::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Point cloud: text `x y z` lines, or little-endian f32 triples if `.bin`.
    #[arg(long)]
    pub points: PathBuf,
    /// Weight file; synthetic weights from --seed when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Model preset; must match the weight file when both are given.
    #[arg(long)]
    pub preset: Option<Variant>,
    /// Euler iterations per ODE block.
    #[arg(long)]
    pub iters: Option<usize>,
    /// End of the integration interval.
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long, value_enum, default_value_t = Numeric::Float)]
    pub numeric: Numeric,
    /// Seed for synthetic weights.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Precomputed sampling plan (PIDX); computed from the cloud when absent.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Worker threads for group-level parallelism.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output file: raw f32 rows, or CSV when the name ends in `.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub preset: Variant,
    #[arg(long, default_value_t = 1024)]
    pub points_n: usize,
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = Variant::Elite)]
    pub preset: Variant,
    /// Stage number, 1 to 4.
    #[arg(long)]
    pub stage: Option<usize>,
    /// Groups streamed through the pipeline; defaults to the stage's rows at --points-n.
    #[arg(long)]
    pub groups: Option<u64>,
    #[arg(long, default_value_t = 1024)]
    pub points_n: usize,
    /// MAC units per step; defaults to the stage's output width.
    #[arg(long)]
    pub lanes: Option<u64>,
    /// Explicit step latencies `a,b,c,d`, replacing the cost model.
    #[arg(long, value_delimiter = ',')]
    pub latencies: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1)]
    pub fifo_depth: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Replace nearest-even rounding with floor in the arithmetic under test.
    Rounding,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = Variant::Elite)]
    pub preset: Variant,
    /// Neighbors per group; defaults to the preset's.
    #[arg(long)]
    pub group_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, default_value_t = Variant::Elite)]
    pub preset: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Extract(a) => extract(&a, out),
        Command::Classify(a) => classify(&a, out),
        Command::Count(a) => count(&a, out),
        Command::Simulate(a) => simulate_cmd(&a, out),
        Command::Verify(a) => verify(&a, out),
        Command::Plan(a) => plan_cmd(&a, out),
        Command::Init(a) => init(&a, out),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn with_schedule(mut config: ModelConfig, iters: Option<usize>, t_end: Option<f64>) -> Result<ModelConfig, CliError> {
    if let Some(c) = iters {
        config.ode_iterations = c;
    }
    if let Some(t) = t_end {
        config.t_end = t;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

/// Loads or synthesizes parameters. Iteration count and interval are
/// runtime settings: tensor shapes do not depend on them, so they can
/// override what a weight file was saved with.
fn load_model(a: &ModelArgs) -> Result<ModelParams<f64>, CliError> {
    match &a.weights {
        Some(path) => {
            let params = load_weights(path)?;
            if let Some(p) = a.preset {
                if p != params.config.variant {
                    return Err(CliError::Data(anyhow::anyhow!(
                        "weight file {} was saved for the {} preset, but --preset {p} was given",
                        path.display(),
                        params.config.variant
                    )));
                }
            }
            let config = with_schedule(params.config.clone(), a.iters, a.t_end)?;
            if config == params.config {
                return Ok(params);
            }
            let mut tensors = params.tensors().into_iter();
            Ok(ModelParams::assemble(&config, |_| Ok(tensors.next().expect("same tensor list").1))?)
        }
        None => {
            let config = with_schedule(ModelConfig::preset(a.preset.unwrap_or(Variant::Elite)), a.iters, a.t_end)?;
            info!("synthetic {} weights, seed {}", config.variant, a.seed);
            Ok(ModelParams::build(&config, a.seed)?)
        }
    }
}

fn load_input(a: &ModelArgs, config: &ModelConfig) -> Result<(PointCloud, SamplingPlan, Duration), CliError> {
    let cloud = normalize_unit_sphere(&read_cloud(&a.points)?);
    info!("{} points from {}", cloud.len(), a.points.display());
    let start = Instant::now();
    let plan = match &a.plan {
        Some(path) => read_plan_file(path, cloud.len())?,
        None => build_sampling_plan(&cloud, config).context("computing the sampling plan")?,
    };
    plan.check(cloud.len(), config.group_size)
        .context("sampling plan does not fit the cloud and model")?;
    Ok((cloud, plan, start.elapsed()))
}

struct Timed {
    result: InferenceResult,
    phases: Vec<(String, Duration)>,
}

fn run_timed(
    cloud: &PointCloud,
    plan: &SamplingPlan,
    params: &ModelParams<f64>,
    numeric: Numeric,
    threads: usize,
) -> Result<Timed, CliError> {
    let opts = RunOptions { threads: threads.max(1) };
    // quantization is a load-time cost, kept out of the breakdown
    let quantized = (numeric == Numeric::Fixed).then(|| params.quantize());
    let mut phases = Vec::new();
    let mut last = Instant::now();
    let mut observe = |p: Phase| {
        let now = Instant::now();
        let label = match p {
            Phase::Embedding => "embedding".to_string(),
            Phase::Stage(s) => format!("stage {}", s + 1),
            Phase::Head => "pool + head".to_string(),
        };
        phases.push((label, now - last));
        last = now;
    };
    let result = match &quantized {
        None => model::forward_observed(cloud, plan, params, &opts, &mut observe)?.to_f64(),
        Some(q) => model::forward_observed(cloud, plan, q, &opts, &mut observe)?.to_f64(),
    };
    Ok(Timed { result, phases })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn extract(a: &ExtractArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = load_model(&a.model)?;
    let config = &params.config;
    let (cloud, plan, plan_time) = load_input(&a.model, config)?;
    let numeric = a.model.numeric;
    let main = run_timed(&cloud, &plan, &params, numeric, a.model.threads)?;
    let other = run_timed(&cloud, &plan, &params, numeric.other(), a.model.threads)?;
    let features = &main.result.stage_features[3];

    writeln!(
        out,
        "model {} (C = {}, t in [{}, {}]), {} points, numeric {}",
        config.variant,
        config.ode_iterations,
        config.t_start,
        config.t_end,
        cloud.len(),
        numeric.label()
    )?;
    writeln!(out, "features {} x {}", features.rows(), features.cols())?;
    writeln!(out, "timing:")?;
    writeln!(out, "  {:<14}{:>10.3} ms", "sampling plan", ms(plan_time))?;
    let mut total = plan_time;
    for (label, d) in &main.phases {
        writeln!(out, "  {label:<14}{:>10.3} ms", ms(*d))?;
        total += *d;
    }
    writeln!(out, "  {:<14}{:>10.3} ms", "total", ms(total))?;
    let feat_err = max_abs_diff(features.as_slice(), other.result.stage_features[3].as_slice());
    let logit_err = max_abs_diff(&main.result.logits, &other.result.logits);
    writeln!(out, "float vs fixed max abs error: features {feat_err:.6e}, logits {logit_err:.6e}")?;
    if let Some(path) = &a.out {
        write_features(path, features)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

/// Indices of the largest `k` values, ties going to the lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn classify(a: &ModelArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = load_model(a)?;
    let (cloud, plan, _) = load_input(a, &params.config)?;
    let timed = run_timed(&cloud, &plan, &params, a.numeric, a.threads)?;
    let logits = &timed.result.logits;
    writeln!(out, "rank class logit")?;
    for (rank, c) in top_k(logits, 5).into_iter().enumerate() {
        writeln!(out, "{} {} {:.6}", rank + 1, c, logits[c])?;
    }
    Ok(())
}

fn millions(v: u64) -> String {
    format!("{:.3}M", v as f64 / 1e6)
}

fn count(a: &CountArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.points_n == 0 {
        return Err(usage("--points-n must be positive"));
    }
    let config = with_schedule(ModelConfig::preset(a.preset), a.iters, None)?;
    let base = with_schedule(ModelConfig::pointmlp_like(), a.iters, None)?;
    let p = count_params(&config);
    let flops = count_flops(&config, a.points_n);
    let bp = count_params(&base);
    let bflops = count_flops(&base, a.points_n);
    writeln!(out, "preset            {}", config.variant)?;
    writeln!(out, "points            {}", a.points_n)?;
    writeln!(out, "ode iterations    {}", config.ode_iterations)?;
    writeln!(out, "params extractor  {} ({})", p.feature_extractor, millions(p.feature_extractor))?;
    writeln!(out, "params head       {} ({})", p.head, millions(p.head))?;
    writeln!(out, "params total      {} ({})", p.total, millions(p.total))?;
    writeln!(out, "flops             {} ({:.3}G)", flops, flops as f64 / 1e9)?;
    writeln!(
        out,
        "vs pointmlp-like  params {:.2}x fewer, flops {:.2}x fewer",
        bp.total as f64 / p.total as f64,
        bflops as f64 / flops as f64
    )?;
    Ok(())
}

fn simulate_cmd(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = ModelConfig::preset(a.preset);
    let (lat, default_groups, label) = match (&a.latencies, a.stage) {
        (Some(l), _) => {
            if l.len() != 4 {
                return Err(usage(format!("--latencies needs 4 values, got {}", l.len())));
            }
            let lat = StageLatency::new([l[0], l[1], l[2], l[3]]).map_err(|e| usage(e.to_string()))?;
            (lat, None, "custom".to_string())
        }
        (None, Some(s)) if (1..=4).contains(&s) => {
            let cost = CostModel {
                lanes: a.lanes,
                ..CostModel::default()
            };
            let lat = default_latencies(&config, s - 1, &cost).map_err(|e| usage(e.to_string()))?;
            let rows = config.stage_rows(a.points_n)[s - 1] as u64;
            (lat, Some(rows), format!("{} stage {s}", config.variant))
        }
        (None, Some(s)) => return Err(usage(format!("invalid stage index {s}; stages are 1 to 4"))),
        (None, None) => return Err(usage("give --stage or --latencies")),
    };
    let groups = a
        .groups
        .or(default_groups)
        .ok_or_else(|| usage("--groups is required with --latencies"))?;
    if groups == 0 {
        return Err(usage("--groups must be positive"));
    }
    let report = simulate(groups, &lat)?;
    let events = simulate_events(groups, &lat, a.fifo_depth).map_err(|e| usage(e.to_string()))?;
    match a.format {
        ReportFormat::Text => write_report_text(out, &label, &report, events)?,
        ReportFormat::Csv => write_report_csv(out, &label, &report, events)?,
    }
    Ok(())
}

fn write_report_text(out: &mut dyn Write, label: &str, r: &PipelineReport, events: u64) -> std::io::Result<()> {
    let l = r.latency.steps();
    writeln!(out, "pipeline          {label}")?;
    writeln!(out, "latencies         {} {} {} {}", l[0], l[1], l[2], l[3])?;
    writeln!(out, "groups            {}", r.n_groups)?;
    writeln!(out, "sequential cycles {}", r.sequential_cycles)?;
    writeln!(out, "pipelined cycles  {}", r.pipelined_cycles)?;
    writeln!(out, "event cycles      {events}")?;
    writeln!(out, "speedup           {:.4}", r.speedup)?;
    let o = r.occupancy;
    writeln!(out, "occupancy         {:.3} {:.3} {:.3} {:.3}", o[0], o[1], o[2], o[3])
}

fn write_report_csv(out: &mut dyn Write, label: &str, r: &PipelineReport, events: u64) -> std::io::Result<()> {
    let l = r.latency.steps();
    let o = r.occupancy;
    writeln!(out, "pipeline,l1,l2,l3,l4,groups,sequential,pipelined,events,speedup,occ1,occ2,occ3,occ4")?;
    writeln!(
        out,
        "{label},{},{},{},{},{},{},{},{events},{:.6},{:.6},{:.6},{:.6},{:.6}",
        l[0], l[1], l[2], l[3], r.n_groups, r.sequential_cycles, r.pipelined_cycles, r.speedup, o[0], o[1], o[2], o[3]
    )
}

fn verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let format = match a.inject_fault {
        Some(Fault::Rounding) => FixedFormat::Q8_16.with_rounding(Rounding::Floor),
        None => FixedFormat::Q8_16,
    };
    let seed = a.seed;
    let suite: Vec<Box<dyn Fn() -> checks::Check>> = vec![
        Box::new(move || checks::permutation_invariance(&ModelConfig::elite(), seed, 2, 3, 128)),
        Box::new(move || checks::euler_order(seed, 10)),
        Box::new(move || checks::ode_resnet_fusion(seed, 200)),
        Box::new(move || checks::fixed_point_oracle(seed, 100_000, format)),
        Box::new(move || checks::pipeline_oracle(seed, 2000)),
        Box::new(checks::elite_pipeline_speedup),
        Box::new(move || checks::geometry_oracle(seed, 40, 512)),
    ];
    let mut failed = 0;
    for check in suite {
        let c = check();
        writeln!(out, "{c}")?;
        out.flush()?;
        if !c.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Property(failed));
    }
    writeln!(out, "all properties hold")?;
    Ok(())
}

fn plan_cmd(a: &PlanArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = ModelConfig::preset(a.preset);
    if let Some(k) = a.group_size {
        config.group_size = k;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let cloud = normalize_unit_sphere(&read_cloud(&a.points)?);
    let plan = build_sampling_plan(&cloud, &config).context("computing the sampling plan")?;
    let mut buf = Vec::new();
    write_plan(&mut buf, &plan)?;
    std::fs::write(&a.out, buf).with_context(|| format!("writing {}", a.out.display()))?;
    let rows: Vec<String> = plan.stages().iter().map(|g| g.rows().to_string()).collect();
    writeln!(out, "plan rows {} with K = {} -> {}", rows.join(" "), config.group_size, a.out.display())?;
    Ok(())
}

fn init(a: &InitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = with_schedule(ModelConfig::preset(a.preset), a.iters, a.t_end)?;
    let params = ModelParams::build(&config, a.seed)?;
    save_weights(&a.out, &params)?;
    writeln!(out, "wrote {} weights ({} parameters) to {}", config.variant, count_params(&config).total, a.out.display())?;
    Ok(())
}
