use std::time::Duration;

use ltlstm::network::{forward_sequence, FactorizedGates, NetworkConfig, NetworkParams, Variant};
use ltlstm::numerics::{uniform_vec, Vector};
use ltlstm::pipeline::{pipeline_bench, pipelined_forward, LaneMode, LaneSchedule, PipelineOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, frames: usize) -> (NetworkParams, NetworkConfig, Vec<Vector>) {
    let mut cfg = NetworkConfig::desk(Variant::LayerTrajectory, 1 + (seed as usize % 4));
    if seed.is_multiple_of(3) {
        cfg.factorized_gates = FactorizedGates::from_bits((seed % 64) as u8).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = NetworkParams::random(&cfg, 0.3, &mut rng).unwrap();
    let xs = (0..frames).map(|_| uniform_vec(cfg.input_dim, 1.0, &mut rng)).collect();
    (p, cfg, xs)
}

fn bits(v: &[Vector]) -> Vec<u64> {
    v.iter().flatten().map(|x| x.to_bits()).collect()
}

#[test]
fn twenty_instances_bitwise_identical() {
    let schedules = [
        LaneSchedule::sequential(),
        LaneSchedule::pipelined(),
        LaneSchedule::batched(1).unwrap(),
        LaneSchedule::batched(4).unwrap(),
        LaneSchedule::batched(8).unwrap(),
    ];
    for seed in 0..20 {
        let (p, cfg, xs) = instance(seed, 64);
        let want = bits(&forward_sequence(&p, &cfg, &xs).unwrap());
        for s in schedules {
            let (got, _) = pipelined_forward(&p, &cfg, &xs, s, PipelineOptions::default()).unwrap();
            assert_eq!(bits(&got), want, "seed {seed} {s}");
        }
    }
}

#[test]
fn batching_divides_layer_kernel_calls() {
    let (p, cfg, xs) = instance(2, 64);
    let run = |s| pipelined_forward(&p, &cfg, &xs, s, PipelineOptions::default()).unwrap().1;
    let single = run(LaneSchedule::pipelined());
    let batched = run(LaneSchedule::batched(8).unwrap());
    let per_window = cfg.num_layers as u64 + 1;
    assert_eq!(single.layer_kernel_invocations, 64 * per_window);
    assert_eq!(batched.layer_kernel_invocations, 8 * per_window);
    assert_eq!(single.layer_kernel_invocations / batched.layer_kernel_invocations, 8);
}

#[test]
fn single_frame_cannot_overlap() {
    let (p, cfg, xs) = instance(1, 1);
    let opts = PipelineOptions {
        time_lane_padding: Duration::from_millis(2),
        ..Default::default()
    };
    let (_, r) = pipelined_forward(&p, &cfg, &xs, LaneSchedule::pipelined(), opts).unwrap();
    assert!(r.wall >= r.time_lane_busy + r.layer_lane_busy);
}

#[test]
fn padded_time_lane_hides_layer_lane() {
    let (p, cfg, xs) = instance(3, 256);
    let opts = PipelineOptions {
        time_lane_padding: Duration::from_micros(800),
        ..Default::default()
    };
    let schedules = [
        LaneSchedule::sequential(),
        LaneSchedule::pipelined(),
        LaneSchedule::batched(8).unwrap(),
    ];
    let report = pipeline_bench(&p, &cfg, &xs, &schedules, opts).unwrap();
    assert!(report.outputs_identical);
    for r in &report.rows {
        assert!(r.time_lane_busy > r.layer_lane_busy, "{}", r.csv_row());
        match r.schedule.mode {
            LaneMode::Sequential => {
                let sum = (r.time_lane_busy + r.layer_lane_busy).as_secs_f64();
                assert!((r.wall.as_secs_f64() - sum).abs() / sum < 0.10, "{}", r.csv_row());
            }
            _ => {
                let dominant = r.dominant_lane_busy().as_secs_f64();
                assert!((r.wall.as_secs_f64() - dominant).abs() / dominant < 0.15, "{}", r.csv_row());
            }
        }
    }
}
