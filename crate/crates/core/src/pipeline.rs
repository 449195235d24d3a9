//! Two-lane evaluation of layer-trajectory networks.
//!
//! The time lane for frame `t + 1` never reads layer-scan state, so one
//! worker can run the time cells ahead while a second worker runs the layer
//! scan and output layer for frames already handed off. The handoff is a
//! bounded single-producer single-consumer channel of per-frame bundles.

use std::fmt;
use std::str::FromStr;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::network::{layer_scan_batch, strided, time_lane, FrameStates, NetworkConfig, NetworkParams, Variant};
use crate::numerics::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneMode {
    /// Both lanes on the caller's thread, frame by frame.
    Sequential,
    Pipelined,
    /// Pipelined, with the layer lane evaluating windows of frames.
    PipelinedBatched,
}

impl fmt::Display for LaneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LaneMode::Sequential => "sequential",
            LaneMode::Pipelined => "pipelined",
            LaneMode::PipelinedBatched => "pipelined_batched",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneSchedule {
    pub mode: LaneMode,
    /// Frames per layer-lane window; only `PipelinedBatched` reads it.
    pub batch_window: usize,
}

impl LaneSchedule {
    pub fn sequential() -> Self {
        Self {
            mode: LaneMode::Sequential,
            batch_window: 1,
        }
    }

    pub fn pipelined() -> Self {
        Self {
            mode: LaneMode::Pipelined,
            batch_window: 1,
        }
    }

    pub fn batched(batch_window: usize) -> Result<Self> {
        let s = Self {
            mode: LaneMode::PipelinedBatched,
            batch_window,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_window == 0 {
            return Err(Error::Config("batch window must be at least 1".into()));
        }
        Ok(())
    }

    /// Window the layer lane actually uses.
    pub fn window(&self) -> usize {
        match self.mode {
            LaneMode::PipelinedBatched => self.batch_window,
            _ => 1,
        }
    }
}

impl fmt::Display for LaneSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            LaneMode::PipelinedBatched => write!(f, "batched:{}", self.batch_window),
            mode => write!(f, "{mode}"),
        }
    }
}

/// Parses `sequential`, `pipelined` or `batched:<B>`.
impl FromStr for LaneSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sequential" => Ok(Self::sequential()),
            "pipelined" => Ok(Self::pipelined()),
            other => {
                let b = other
                    .strip_prefix("batched:")
                    .and_then(|b| b.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown schedule '{other}'")))?;
                Self::batched(b)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Handoff buffer capacity in frame bundles; a full buffer blocks the
    /// time lane.
    pub buffer_capacity: usize,
    /// Test hook: extra time spent in the time lane per frame, counted as
    /// busy time.
    pub time_lane_padding: Duration,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            buffer_capacity: 16,
            time_lane_padding: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub schedule: LaneSchedule,
    /// Processed frames.
    pub frames: usize,
    pub wall: Duration,
    pub time_lane_busy: Duration,
    pub layer_lane_busy: Duration,
    /// Layer-cell and output-layer kernel calls made by the layer lane.
    pub layer_kernel_invocations: u64,
}

impl TimingReport {
    pub const CSV_HEADER: &'static str =
        "mode,T,B,wall_ms,time_lane_busy_ms,layer_lane_busy_ms,layer_kernel_invocations";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.3},{}",
            self.schedule.mode,
            self.frames,
            self.schedule.window(),
            ms(self.wall),
            ms(self.time_lane_busy),
            ms(self.layer_lane_busy),
            self.layer_kernel_invocations
        )
    }

    pub fn wall_to_time_lane(&self) -> f64 {
        self.wall.as_secs_f64() / self.time_lane_busy.as_secs_f64()
    }

    pub fn dominant_lane_busy(&self) -> Duration {
        self.time_lane_busy.max(self.layer_lane_busy)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Time cells for one frame, plus the padding hook. Returns the per-layer
/// outputs and the busy time spent.
fn time_step(
    params: &NetworkParams,
    config: &NetworkConfig,
    s_t: &[f64],
    states: &mut FrameStates,
    padding: Duration,
) -> Result<(Vec<Vector>, Duration)> {
    let start = Instant::now();
    let acts = time_lane(params, config, s_t, states)?;
    if !padding.is_zero() {
        thread::sleep(padding);
    }
    let hs: Vec<Vector> = acts.iter().map(|a| a.h.clone()).collect();
    *states = FrameStates {
        time_states: acts
            .into_iter()
            .map(|a| crate::cells::TimeCellState { c: a.c, h: a.h })
            .collect(),
    };
    Ok((hs, start.elapsed()))
}

struct LayerLane<'a> {
    params: &'a NetworkParams,
    config: &'a NetworkConfig,
    logits: Vec<Vector>,
    busy: Duration,
    kernels: u64,
}

impl LayerLane<'_> {
    fn run(&mut self, window: &[Vec<Vector>]) -> Result<()> {
        let start = Instant::now();
        let out = layer_scan_batch(self.params, self.config, window)?;
        self.logits.extend(out.into_iter().map(|(_, z)| z));
        self.kernels += self.config.num_layers as u64 + 1;
        self.busy += start.elapsed();
        Ok(())
    }
}

type Bundle = (usize, Vec<Vector>);

fn time_worker(
    params: &NetworkParams,
    config: &NetworkConfig,
    frames: &[Vector],
    padding: Duration,
    tx: SyncSender<Bundle>,
) -> Result<Duration> {
    let mut states = FrameStates::zeros(config);
    let mut busy = Duration::ZERO;
    for (t, s_t) in strided(frames, config.frame_stride).enumerate() {
        let (hs, spent) = time_step(params, config, s_t, &mut states, padding)?;
        busy += spent;
        if tx.send((t, hs)).is_err() {
            // The layer lane stopped early; its error is reported instead.
            break;
        }
    }
    Ok(busy)
}

fn layer_worker(lane: &mut LayerLane<'_>, rx: Receiver<Bundle>, window: usize) -> Result<()> {
    let mut pending: Vec<Vec<Vector>> = Vec::with_capacity(window);
    for (expected, (t, hs)) in rx.into_iter().enumerate() {
        if t != expected {
            return Err(Error::Worker(format!("layer lane received frame {t}, expected {expected}")));
        }
        pending.push(hs);
        if pending.len() == window {
            lane.run(&pending)?;
            pending.clear();
        }
    }
    if !pending.is_empty() {
        lane.run(&pending)?;
    }
    Ok(())
}

fn join<T>(handle: thread::ScopedJoinHandle<'_, Result<T>>, lane: &str) -> Result<T> {
    handle
        .join()
        .map_err(|_| Error::Worker(format!("{lane} lane panicked")))?
}

/// Forward pass of a layer-trajectory network under `schedule`. Logits are
/// bitwise identical to `forward_sequence` in every mode.
pub fn pipelined_forward(
    params: &NetworkParams,
    config: &NetworkConfig,
    frames: &[Vector],
    schedule: LaneSchedule,
    options: PipelineOptions,
) -> Result<(Vec<Vector>, TimingReport)> {
    if config.variant != Variant::LayerTrajectory {
        return Err(Error::Config(format!(
            "pipelined evaluation needs the layer_trajectory variant, got {}",
            config.variant
        )));
    }
    schedule.validate()?;
    if options.buffer_capacity == 0 {
        return Err(Error::Config("handoff buffer capacity must be at least 1".into()));
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput("frame sequence"));
    }
    params.check(config)?;

    let mut lane = LayerLane {
        params,
        config,
        logits: Vec::with_capacity(config.processed_frames(frames.len())),
        busy: Duration::ZERO,
        kernels: 0,
    };
    let start = Instant::now();
    let time_busy = match schedule.mode {
        LaneMode::Sequential => {
            let mut states = FrameStates::zeros(config);
            let mut busy = Duration::ZERO;
            for s_t in strided(frames, config.frame_stride) {
                let (hs, spent) = time_step(params, config, s_t, &mut states, options.time_lane_padding)?;
                busy += spent;
                lane.run(&[hs])?;
            }
            busy
        }
        LaneMode::Pipelined | LaneMode::PipelinedBatched => {
            let (tx, rx) = sync_channel::<Bundle>(options.buffer_capacity);
            let window = schedule.window();
            let lane_ref = &mut lane;
            thread::scope(|scope| {
                let producer = scope.spawn(move || time_worker(params, config, frames, options.time_lane_padding, tx));
                let consumer = scope.spawn(move || layer_worker(lane_ref, rx, window));
                let consumed = join(consumer, "layer");
                let produced = join(producer, "time");
                consumed.and(produced)
            })?
        }
    };
    let wall = start.elapsed();
    let report = TimingReport {
        schedule,
        frames: lane.logits.len(),
        wall,
        time_lane_busy: time_busy,
        layer_lane_busy: lane.busy,
        layer_kernel_invocations: lane.kernels,
    };
    log::debug!("{schedule}: {}", report.csv_row());
    Ok((lane.logits, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// One median row per schedule, in the order given.
    pub rows: Vec<TimingReport>,
    /// Whether every schedule produced bitwise-identical logits.
    pub outputs_identical: bool,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", TimingReport::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

pub const BENCH_RUNS: usize = 5;

/// Times each schedule on the same input: one discarded warmup, then the
/// run with the median wall time out of [`BENCH_RUNS`].
pub fn pipeline_bench(
    params: &NetworkParams,
    config: &NetworkConfig,
    frames: &[Vector],
    schedules: &[LaneSchedule],
    options: PipelineOptions,
) -> Result<BenchReport> {
    if schedules.len() < 2 {
        return Err(Error::Config("a bench needs at least two schedules".into()));
    }
    let mut rows = Vec::with_capacity(schedules.len());
    let mut reference: Option<Vec<u64>> = None;
    let mut identical = true;
    for &schedule in schedules {
        pipelined_forward(params, config, frames, schedule, options)?;
        let mut runs = Vec::with_capacity(BENCH_RUNS);
        for _ in 0..BENCH_RUNS {
            let (logits, report) = pipelined_forward(params, config, frames, schedule, options)?;
            let bits: Vec<u64> = logits.iter().flatten().map(|v| v.to_bits()).collect();
            match &reference {
                None => reference = Some(bits),
                Some(r) => identical &= *r == bits,
            }
            runs.push(report);
        }
        runs.sort_by_key(|r| r.wall);
        rows.push(runs[BENCH_RUNS / 2]);
    }
    Ok(BenchReport {
        rows,
        outputs_identical: identical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::forward_sequence;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> (NetworkParams, NetworkConfig, Vec<Vector>) {
        let mut cfg = NetworkConfig::desk(Variant::LayerTrajectory, 3);
        cfg.cell_dim = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = NetworkParams::init(&cfg, &mut rng).unwrap();
        let frames = (0..20).map(|_| crate::numerics::uniform_vec(16, 1.0, &mut rng)).collect();
        (p, cfg, frames)
    }

    #[test]
    fn schedule_parsing() {
        assert_eq!("sequential".parse::<LaneSchedule>().unwrap(), LaneSchedule::sequential());
        assert_eq!("batched:8".parse::<LaneSchedule>().unwrap(), LaneSchedule::batched(8).unwrap());
        assert!("batched:0".parse::<LaneSchedule>().is_err());
        assert!("parallel".parse::<LaneSchedule>().is_err());
        assert_eq!(LaneSchedule::batched(4).unwrap().to_string(), "batched:4");
        assert_eq!(LaneSchedule::sequential().window(), 1);
    }

    #[test]
    fn all_modes_match_forward_sequence() {
        let (p, cfg, frames) = model(1);
        let want = forward_sequence(&p, &cfg, &frames).unwrap();
        for s in [
            LaneSchedule::sequential(),
            LaneSchedule::pipelined(),
            LaneSchedule::batched(1).unwrap(),
            LaneSchedule::batched(3).unwrap(),
            LaneSchedule::batched(64).unwrap(),
        ] {
            let (got, report) = pipelined_forward(&p, &cfg, &frames, s, PipelineOptions::default()).unwrap();
            assert_eq!(got, want, "{s}");
            assert_eq!(report.frames, 20);
            let windows = 20u64.div_ceil(s.window() as u64);
            assert_eq!(report.layer_kernel_invocations, windows * 4);
        }
    }

    #[test]
    fn tiny_buffer_and_stride() {
        let (p, mut cfg, frames) = model(2);
        cfg.frame_stride = 3;
        let opts = PipelineOptions {
            buffer_capacity: 1,
            ..Default::default()
        };
        let want = forward_sequence(&p, &cfg, &frames).unwrap();
        let (got, _) = pipelined_forward(&p, &cfg, &frames, LaneSchedule::batched(2).unwrap(), opts).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn rejects_bad_requests() {
        let (p, cfg, frames) = model(3);
        let mut stacked = cfg.clone();
        stacked.variant = Variant::Stacked;
        let sp = NetworkParams::init(&stacked, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let opts = PipelineOptions::default();
        assert!(matches!(
            pipelined_forward(&sp, &stacked, &frames, LaneSchedule::pipelined(), opts),
            Err(Error::Config(_))
        ));
        assert!(pipelined_forward(&p, &cfg, &[], LaneSchedule::pipelined(), opts).is_err());
        let bad = LaneSchedule {
            mode: LaneMode::PipelinedBatched,
            batch_window: 0,
        };
        assert!(pipelined_forward(&p, &cfg, &frames, bad, opts).is_err());
        assert!(pipeline_bench(&p, &cfg, &frames, &[LaneSchedule::sequential()], opts).is_err());
    }

    #[test]
    fn time_lane_error_propagates() {
        let (p, cfg, mut frames) = model(4);
        frames[7] = vec![0.0; 3];
        for s in [LaneSchedule::sequential(), LaneSchedule::pipelined(), LaneSchedule::batched(4).unwrap()] {
            assert!(matches!(
                pipelined_forward(&p, &cfg, &frames, s, PipelineOptions::default()),
                Err(Error::DimensionMismatch { .. })
            ));
        }
    }

    #[test]
    fn bench_csv_shape() {
        let (p, cfg, frames) = model(5);
        let r = pipeline_bench(
            &p,
            &cfg,
            &frames,
            &[LaneSchedule::sequential(), LaneSchedule::batched(4).unwrap()],
            PipelineOptions::default(),
        )
        .unwrap();
        assert!(r.outputs_identical);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TimingReport::CSV_HEADER);
        assert!(lines[1].starts_with("sequential,20,1,"));
        assert!(lines[2].starts_with("pipelined_batched,20,4,"));
        assert!(lines[2].ends_with(",20"));
    }
}
