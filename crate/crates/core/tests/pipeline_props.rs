use pointode_core::model::{ModelConfig, Variant};
use pointode_core::pipeline::{default_latencies, simulate, simulate_events, CostModel, StageLatency};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn event_simulation_agrees_with_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let steps = [0; 4].map(|_| rng.gen_range(1..=50));
        let lat = StageLatency::new(steps).unwrap();
        let n = rng.gen_range(1..=200);
        let depth = rng.gen_range(1..=4);
        let closed = simulate(n, &lat).unwrap().pipelined_cycles;
        assert_eq!(simulate_events(n, &lat, depth).unwrap(), closed, "{steps:?} n={n} depth={depth}");
    }
}

#[test]
fn elite_stage_speedups_are_near_three() {
    let cfg = ModelConfig::elite();
    let cost = CostModel::default();
    let mut groups = 1024u64;
    for s in 0..4 {
        groups /= 2;
        let lat = default_latencies(&cfg, s, &cost).unwrap();
        let r = simulate(groups, &lat).unwrap();
        assert!((2.5..=3.5).contains(&r.speedup), "stage {s}: {}", r.speedup);
        assert_eq!(simulate_events(groups, &lat, 1).unwrap(), r.pipelined_cycles);
    }
}

#[test]
fn latency_table_covers_every_preset() {
    for v in Variant::ALL {
        let cfg = ModelConfig::preset(v);
        for s in 0..4 {
            let lat = default_latencies(&cfg, s, &CostModel::default()).unwrap();
            assert!(lat.steps().iter().all(|&l| l >= 1));
        }
        assert!(default_latencies(&cfg, 4, &CostModel::default()).is_err());
    }
    let zero_lanes = CostModel { lanes: Some(0), ..CostModel::default() };
    assert!(default_latencies(&ModelConfig::elite(), 0, &zero_lanes).is_err());
}

proptest! {
    #[test]
    fn speedup_is_bounded_and_monotone(
        steps in proptest::array::uniform4(1u64..1000),
        n in 1u64..5000,
        bump in 0usize..4,
    ) {
        let lat = StageLatency::new(steps).unwrap();
        let r = simulate(n, &lat).unwrap();
        let sum: u64 = steps.iter().sum();
        let max = *steps.iter().max().unwrap();
        prop_assert!(r.speedup >= 1.0);
        prop_assert!(r.speedup <= 4.0f64.min(sum as f64 / max as f64) + 1e-12);
        prop_assert!(r.pipelined_cycles <= r.sequential_cycles);
        prop_assert!(r.occupancy.iter().all(|&o| o > 0.0 && o <= 1.0));

        // more groups never shrink the makespan, slower steps never speed it up
        let more = simulate(n + 1, &lat).unwrap();
        prop_assert!(more.pipelined_cycles >= r.pipelined_cycles);
        prop_assert!(more.speedup >= r.speedup - 1e-12);
        let mut slower = steps;
        slower[bump] += 1;
        let s = simulate(n, &StageLatency::new(slower).unwrap()).unwrap();
        prop_assert!(s.pipelined_cycles >= r.pipelined_cycles);
    }
}
