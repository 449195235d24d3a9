use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::task::{generate_task, SyntheticTaskSpec, TASK_KEYS};
use crate::error::{Error, Result};
use crate::kvfile::KeyValues;
use crate::network::{save_model, NetworkConfig, NetworkParams, Variant, NETWORK_KEYS};
use crate::training::{
    batch_loss, batch_loss_and_grad, Batch, BatchEval, GradientSet, Optimizer, OptimizerKind, Sequence,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum, or Adam's β1.
    pub momentum: f64,
    /// Sequences per update.
    pub batch_size: usize,
    pub epochs: usize,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    /// Global-norm clip threshold, when enabled.
    pub clip_norm: Option<f64>,
    /// When false the `wall_s` column is written as 0 so repeated runs
    /// produce identical files.
    pub record_wall_clock: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 16,
            epochs: 10,
            eval_every: 1,
            clip_norm: Some(1.0),
            record_wall_clock: true,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "train.optimizer",
    "train.learning_rate",
    "train.momentum",
    "train.batch_size",
    "train.epochs",
    "train.eval_every",
    "train.clip_norm",
    "train.record_wall_clock",
];

/// `none` disables clipping.
fn parse_clip(raw: &str) -> Result<Option<f64>> {
    if raw.trim() == "none" {
        return Ok(None);
    }
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| *v > 0.0)
        .map(Some)
        .ok_or_else(|| Error::Config(format!("train.clip_norm must be positive or 'none', got '{raw}'")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub task: SyntheticTaskSpec,
    pub train: TrainSettings,
    /// Seeds initialization and minibatch order.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.task.validate()?;
        if self.network.input_dim != self.task.feature_dim {
            return Err(Error::Config(format!(
                "network input_dim {} differs from task feature_dim {}",
                self.network.input_dim, self.task.feature_dim
            )));
        }
        if self.network.output_dim != self.task.num_classes {
            return Err(Error::Config(format!(
                "network output_dim {} differs from task num_classes {}",
                self.network.output_dim, self.task.num_classes
            )));
        }
        if self.network.target_delay != self.task.delay {
            return Err(Error::Config(format!(
                "network target_delay {} differs from task delay {}",
                self.network.target_delay, self.task.delay
            )));
        }
        if self.train.batch_size == 0 || self.train.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be positive".into()));
        }
        Optimizer::new(self.train.optimizer, self.train.learning_rate, self.train.momentum)?;
        Ok(())
    }

    /// Parses a config file. `seed` and `out` override the file when given.
    /// The network's target delay defaults to the task delay.
    pub fn from_kv(kv: &KeyValues, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let mut known: Vec<&str> = vec!["seed", "out_dir"];
        known.extend_from_slice(NETWORK_KEYS);
        known.extend_from_slice(TASK_KEYS);
        known.extend_from_slice(TRAIN_KEYS);
        kv.deny_unknown(&known)?;

        let seed = match seed {
            Some(s) => s,
            None => kv.get("seed")?.unwrap_or(0),
        };
        let task = SyntheticTaskSpec::from_kv(kv, seed)?;
        let mut network = NetworkConfig::from_kv(kv)?;
        if !kv.contains("target_delay") {
            network.target_delay = task.delay;
        }
        if !kv.contains("input_dim") {
            network.input_dim = task.feature_dim;
        }
        if !kv.contains("output_dim") {
            network.output_dim = task.num_classes;
        }
        let mut train = TrainSettings::default();
        if let Some(v) = kv.get("train.optimizer")? {
            train.optimizer = v;
        }
        if let Some(v) = kv.get("train.learning_rate")? {
            train.learning_rate = v;
        }
        if let Some(v) = kv.get("train.momentum")? {
            train.momentum = v;
        }
        if let Some(v) = kv.get("train.batch_size")? {
            train.batch_size = v;
        }
        if let Some(v) = kv.get("train.epochs")? {
            train.epochs = v;
        }
        if let Some(v) = kv.get("train.eval_every")? {
            train.eval_every = v;
        }
        if let Some(raw) = kv.raw("train.clip_norm") {
            train.clip_norm = parse_clip(raw)?;
        }
        if let Some(v) = kv.get("train.record_wall_clock")? {
            train.record_wall_clock = v;
        }
        let out_dir = match out {
            Some(p) => p.to_path_buf(),
            None => kv.get::<String>("out_dir")?.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")),
        };
        let cfg = Self {
            network,
            task,
            train,
            seed,
            out_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::read(path)?, seed, out)
    }

    /// Fully resolved config in the same key-value format it is read from.
    pub fn to_kv(&self) -> String {
        let t = &self.train;
        let mut out = format!("seed = {}\nout_dir = {}\n", self.seed, self.out_dir.display());
        out.push_str(&self.network.to_kv());
        out.push_str(&self.task.to_kv());
        let _ = write!(
            out,
            "train.optimizer = {}\ntrain.learning_rate = {}\ntrain.momentum = {}\ntrain.batch_size = {}\ntrain.epochs = {}\ntrain.eval_every = {}\ntrain.clip_norm = {}\ntrain.record_wall_clock = {}\n",
            t.optimizer,
            t.learning_rate,
            t.momentum,
            t.batch_size,
            t.epochs,
            t.eval_every,
            t.clip_norm.map_or("none".to_string(), |c| c.to_string()),
            t.record_wall_clock
        );
        out
    }
}

/// The depth-comparison preset: delayed recall at delay 8 over 8 classes,
/// desk dimensions, seeded init, data and minibatch order.
pub fn depth_preset(variant: Variant, num_layers: usize, seed: u64, out_dir: impl Into<PathBuf>) -> ExperimentConfig {
    let task = SyntheticTaskSpec {
        train_count: DEPTH_PRESET_TRAIN_COUNT,
        ..SyntheticTaskSpec::delayed_recall(8, seed)
    };
    let mut network = NetworkConfig::desk(variant, num_layers);
    network.target_delay = task.delay;
    ExperimentConfig {
        network,
        task,
        train: TrainSettings {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.003,
            epochs: 6,
            record_wall_clock: false,
            ..Default::default()
        },
        seed,
        out_dir: out_dir.into(),
    }
}

const DEPTH_PRESET_TRAIN_COUNT: usize = 2048;

/// Keeps the labels of processed frames only.
pub fn align_to_stride(sequences: &[Sequence], stride: usize) -> Vec<Sequence> {
    sequences
        .iter()
        .map(|s| Sequence {
            frames: s.frames.clone(),
            labels: s.labels.iter().step_by(stride.max(1)).copied().collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub final_eval: BatchEval,
    pub epochs_run: usize,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub params: NetworkParams,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,frame_acc,wall_s";

struct Metrics {
    text: String,
    started: Instant,
    wall: bool,
}

impl Metrics {
    fn row(&mut self, epoch: usize, split: &str, eval: &BatchEval) {
        let wall = if self.wall { self.started.elapsed().as_secs_f64() } else { 0.0 };
        let _ = writeln!(self.text, "{epoch},{split},{:.9},{:.6},{:.3}", eval.loss, eval.frame_accuracy(), wall);
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn param_norm(params: &NetworkParams) -> f64 {
    GradientSet(params.clone()).global_norm()
}

fn dump_diagnostics(dir: &Path, lines: &[String]) -> PathBuf {
    let path = dir.join("diagnostic.txt");
    if let Err(e) = write_file(&path, &(lines.join("\n") + "\n")) {
        log::error!("could not write diagnostic dump: {e}");
    }
    path
}

/// Trains from a seeded initialization, evaluating before training and at
/// the configured cadence. Writes `metrics.csv`, `model.ckpt`,
/// `config.resolved` and `seeds.txt` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.resolved"), &config.to_kv())?;
    write_file(
        &dir.join("seeds.txt"),
        &format!("init_and_order = {}\ntask = {}\n", config.seed, config.task.seed),
    )?;
    log::info!(
        "experiment: {} L={} seed={} task_seed={} -> {}",
        config.network.variant,
        config.network.num_layers,
        config.seed,
        config.task.seed,
        dir.display()
    );

    let data = generate_task(&config.task)?;
    let stride = config.network.frame_stride;
    let train_set = align_to_stride(&data.train, stride);
    let eval_batch = Batch::new(align_to_stride(&data.eval, stride));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = NetworkParams::init(&config.network, &mut rng)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);
    let mut optimizer = Optimizer::new(config.train.optimizer, config.train.learning_rate, config.train.momentum)?;

    let metrics_path = dir.join("metrics.csv");
    let mut metrics = Metrics {
        text: format!("{METRICS_HEADER}\n"),
        started: Instant::now(),
        wall: config.train.record_wall_clock,
    };
    let mut final_eval = batch_loss(&params, &config.network, &eval_batch)?;
    metrics.row(0, "eval", &final_eval);
    write_file(&metrics_path, &metrics.text)?;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.train.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut compared = 0;
        let mut correct = 0;
        for (step, chunk) in order.chunks(config.train.batch_size).enumerate() {
            let batch = Batch::new(chunk.iter().map(|&i| train_set[i].clone()).collect());
            let (eval, mut grads) = batch_loss_and_grad(&params, &config.network, &batch)?;
            let bad_grad = grads.non_finite();
            if !eval.loss.is_finite() || bad_grad.is_some() {
                let dump = dump_diagnostics(
                    dir,
                    &[
                        format!("epoch = {epoch}"),
                        format!("step = {step}"),
                        format!("loss = {}", eval.loss),
                        format!("grad_norm = {}", grads.global_norm()),
                        format!("first_non_finite_gradient = {}", bad_grad.as_deref().unwrap_or("none")),
                        format!("param_norm = {}", param_norm(&params)),
                        format!("batch_sequences = {chunk:?}"),
                    ],
                );
                write_file(&metrics_path, &metrics.text)?;
                return Err(Error::NonFinite(format!(
                    "epoch {epoch} step {step}: loss {} (diagnostics in {})",
                    eval.loss,
                    dump.display()
                )));
            }
            if let Some(max) = config.train.clip_norm {
                grads.clip_global_norm(max);
            }
            params = optimizer.step(&params, &grads)?;
            loss_sum += eval.loss * eval.compared as f64;
            compared += eval.compared;
            correct += eval.correct;
        }
        let train_eval = BatchEval {
            loss: if compared == 0 { 0.0 } else { loss_sum / compared as f64 },
            compared,
            correct,
        };
        metrics.row(epoch, "train", &train_eval);
        if epoch % config.train.eval_every == 0 || epoch == config.train.epochs {
            final_eval = batch_loss(&params, &config.network, &eval_batch)?;
            if !final_eval.loss.is_finite() {
                let dump = dump_diagnostics(
                    dir,
                    &[
                        format!("epoch = {epoch}"),
                        format!("eval_loss = {}", final_eval.loss),
                        format!("param_norm = {}", param_norm(&params)),
                    ],
                );
                write_file(&metrics_path, &metrics.text)?;
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}: eval loss {} (diagnostics in {})",
                    final_eval.loss,
                    dump.display()
                )));
            }
            metrics.row(epoch, "eval", &final_eval);
            log::info!(
                "epoch {epoch}: train {:.4} eval {:.4} acc {:.3}",
                train_eval.loss,
                final_eval.loss,
                final_eval.frame_accuracy()
            );
        }
        write_file(&metrics_path, &metrics.text)?;
    }

    let checkpoint_path = dir.join("model.ckpt");
    save_model(&params, &config.network, &checkpoint_path)?;
    Ok(ExperimentSummary {
        final_eval,
        epochs_run: config.train.epochs,
        metrics_path,
        checkpoint_path,
        params,
    })
}
