//! Cycle model of the four-step streaming stage.
//!
//! Each sampled centroid flows through four steps: sample and group with
//! mean/std (1), normalization transform (2), MLP with pooling (3) and the
//! residual blocks (4). Steps hand groups to each other through single-slot
//! FIFOs, so up to four groups are in flight.
//!
//! Latencies come from an analytical cost model, not measured hardware:
//!
//! | step | cycles                                             |
//! |------|----------------------------------------------------|
//! | 1    | `sample_group_cost * K * F_in`                     |
//! | 2    | `transform_cost * K * F_in`                        |
//! | 3    | `ceil(K * (2 * F_in * F + pre * 2 * F * F') / lanes)` |
//! | 4    | `ceil(pos * 2 * F * F' / lanes)`                   |
//!
//! where `pre`/`pos` count block applications (Euler iterations for ODE
//! blocks) before and after pooling, and `lanes` defaults to `F` (one MAC
//! unit per output channel). Every latency is at least one cycle.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec;
use core::cmp::Reverse;

use crate::error::{Error, Result};
use crate::model::{BlockSpec, ModelConfig};

pub const STEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLatency {
    steps: [u64; STEPS],
}

impl StageLatency {
    pub fn new(steps: [u64; STEPS]) -> Result<Self> {
        if let Some(i) = steps.iter().position(|&l| l == 0) {
            return Err(Error::OutOfRange {
                name: "step latency",
                value: 0,
                range: format!("at least 1 cycle (step {})", i + 1),
            });
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> [u64; STEPS] {
        self.steps
    }

    pub fn total(&self) -> u64 {
        self.steps.iter().sum()
    }

    pub fn bottleneck(&self) -> u64 {
        self.steps.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    pub sample_group_cost: u64,
    pub transform_cost: u64,
    /// Parallel MAC lanes in steps 3 and 4; `None` means one per output channel.
    pub lanes: Option<u64>,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            sample_group_cost: 2,
            transform_cost: 2,
            lanes: None,
        }
    }
}

fn applications(blocks: &[BlockSpec]) -> u64 {
    blocks.iter().map(|b| b.iterations as u64).sum()
}

/// Latencies of stage `stage` (0-based) under `cost`.
pub fn default_latencies(config: &ModelConfig, stage: usize, cost: &CostModel) -> Result<StageLatency> {
    if stage >= STEPS {
        return Err(Error::OutOfRange {
            name: "stage",
            value: stage + 1,
            range: "1..=4".into(),
        });
    }
    config.validate()?;
    let layout = config.stage_layout(stage);
    let k = config.group_size as u64;
    let fin = layout.in_dim as u64;
    let f = layout.out_dim as u64;
    let hidden = config.hidden_dim(stage) as u64;
    let lanes = cost.lanes.unwrap_or(f);
    if lanes == 0 {
        return Err(Error::OutOfRange {
            name: "lanes",
            value: 0,
            range: "at least 1".into(),
        });
    }
    let block = 2 * f * hidden;
    let mlp = k * (2 * fin * f + applications(&layout.pre) * block);
    let pos = applications(&layout.pos) * block;
    let steps = [
        cost.sample_group_cost * k * fin,
        cost.transform_cost * k * fin,
        mlp.div_ceil(lanes),
        pos.div_ceil(lanes),
    ];
    StageLatency::new(steps.map(|l| l.max(1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub n_groups: u64,
    pub latency: StageLatency,
    pub sequential_cycles: u64,
    pub pipelined_cycles: u64,
    pub speedup: f64,
    /// Fraction of the pipelined makespan each step spends busy.
    pub occupancy: [f64; STEPS],
}

/// Closed-form makespan of the synchronous pipeline.
pub fn simulate(n_groups: u64, lat: &StageLatency) -> Result<PipelineReport> {
    if n_groups == 0 {
        return Err(Error::Empty("group stream"));
    }
    let sequential = n_groups * lat.total();
    let pipelined = lat.total() + (n_groups - 1) * lat.bottleneck();
    let occupancy = lat.steps().map(|l| (n_groups * l) as f64 / pipelined as f64);
    Ok(PipelineReport {
        n_groups,
        latency: *lat,
        sequential_cycles: sequential,
        pipelined_cycles: pipelined,
        speedup: sequential as f64 / pipelined as f64,
        occupancy,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Unit {
    Idle,
    Busy,
    /// Finished its group but the next FIFO is full.
    Blocked,
}

/// Discrete-event makespan with explicit FIFOs of `fifo_depth` slots between
/// steps. Independent of the closed form; used to cross-check it.
pub fn simulate_events(n_groups: u64, lat: &StageLatency, fifo_depth: usize) -> Result<u64> {
    if n_groups == 0 {
        return Err(Error::Empty("group stream"));
    }
    if fifo_depth == 0 {
        return Err(Error::OutOfRange {
            name: "fifo depth",
            value: 0,
            range: "at least 1".into(),
        });
    }
    let steps = lat.steps();
    let mut units = [Unit::Idle; STEPS];
    // fifo[i] feeds step i + 1
    let mut fifo = vec![0usize; STEPS - 1];
    let mut waiting = n_groups;
    let mut done = 0u64;
    let mut events: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut now = 0u64;
    loop {
        // Settle all handoffs possible at `now`, downstream first so freed
        // slots propagate upstream within the same instant.
        let mut changed = true;
        while changed {
            changed = false;
            for i in (0..STEPS).rev() {
                if units[i] == Unit::Blocked {
                    if i + 1 == STEPS {
                        done += 1;
                        units[i] = Unit::Idle;
                        changed = true;
                    } else if fifo[i] < fifo_depth {
                        fifo[i] += 1;
                        units[i] = Unit::Idle;
                        changed = true;
                    }
                }
                if units[i] == Unit::Idle {
                    let available = if i == 0 { waiting > 0 } else { fifo[i - 1] > 0 };
                    if available {
                        if i == 0 {
                            waiting -= 1;
                        } else {
                            fifo[i - 1] -= 1;
                        }
                        units[i] = Unit::Busy;
                        events.push(Reverse((now + steps[i], i)));
                        changed = true;
                    }
                }
            }
        }
        if done == n_groups {
            return Ok(now);
        }
        let Some(Reverse((t, _))) = events.peek().copied() else {
            return Err(Error::InvalidConfig("pipeline deadlocked".into()));
        };
        now = t;
        while let Some(&Reverse((t, i))) = events.peek() {
            if t != now {
                break;
            }
            events.pop();
            units[i] = Unit::Blocked;
        }
    }
}
