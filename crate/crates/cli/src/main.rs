use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ltlstm::costmodel::{count_ops, production_rows, render_csv, render_table};
use ltlstm::harness::{generate_task, grad_norm_probe, run_experiment, ExperimentConfig, TaskData};
use ltlstm::kvfile::KeyValues;
use ltlstm::network::{load_model, NetworkParams};
use ltlstm::numerics::Vector;
use ltlstm::pipeline::{pipeline_bench, LaneSchedule, PipelineOptions};
use ltlstm::training::{batch_loss, grad_check_with, batch_loss_and_grad, Batch, GradCheckOptions, Sequence};
use ltlstm::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Used when no `--config` is given.
const DEFAULT_CONFIG: &str = "variant = layer_trajectory\nnum_layers = 4\n";

#[derive(Parser)]
#[command(name = "ltlstm", version, about = "Layer-trajectory LSTM experiments")]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured synthetic task.
    Train,
    /// Evaluate a checkpoint on the eval split.
    Eval {
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences at initialization.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        sequences: usize,
        #[arg(long, default_value_t = 4096)]
        max_elements: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Per-frame operation counts. Without `--config`, the production table.
    Countops {
        #[arg(long)]
        csv: bool,
    },
    /// Time the two-lane evaluator under several schedules.
    Bench {
        #[arg(long, default_value_t = 256)]
        frames: usize,
        /// Comma-separated: sequential, pipelined, batched:B.
        #[arg(long, default_value = "sequential,pipelined,batched:8")]
        schedules: String,
        /// Artificial per-frame time-lane work, in microseconds.
        #[arg(long, default_value_t = 0)]
        padding_us: u64,
    },
    /// Per-layer gradient norms at initialization.
    Probe,
    /// Write the task's train and eval splits as CSV.
    GenData,
}

fn experiment(cli: &Cli) -> ltlstm::Result<ExperimentConfig> {
    match &cli.config {
        Some(path) => ExperimentConfig::read(path, cli.seed, cli.out.as_deref()),
        None => ExperimentConfig::from_kv(
            &KeyValues::parse(DEFAULT_CONFIG, "<default>")?,
            cli.seed,
            cli.out.as_deref(),
        ),
    }
}

fn write_out(dir: &Path, name: &str, text: &str) -> ltlstm::Result<PathBuf> {
    let io = |e| Error::Io {
        path: dir.join(name),
        source: e,
    };
    fs::create_dir_all(dir).map_err(io)?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(io)?;
    Ok(path)
}

fn init_params(cfg: &ExperimentConfig) -> ltlstm::Result<NetworkParams> {
    NetworkParams::init(&cfg.network, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

fn first(seqs: &[Sequence], n: usize) -> Batch {
    Batch::new(seqs.iter().take(n.max(1)).cloned().collect())
}

fn sequences_csv(seqs: &[Sequence]) -> String {
    let dim = seqs.first().and_then(|s| s.frames.first()).map_or(0, Vec::len);
    let mut out = String::from("sequence,frame,label");
    for i in 0..dim {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for (s, seq) in seqs.iter().enumerate() {
        for (t, (frame, label)) in seq.frames.iter().zip(&seq.labels).enumerate() {
            let _ = write!(out, "{s},{t},{label}");
            for x in frame {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
    }
    out
}

enum Outcome {
    Ok,
    NumericFailure,
}

fn run(cli: &Cli) -> ltlstm::Result<Outcome> {
    match &cli.command {
        Command::Train => {
            let cfg = experiment(cli)?;
            let summary = run_experiment(&cfg)?;
            println!(
                "epochs {} eval loss {:.6} frame_acc {:.4}",
                summary.epochs_run,
                summary.final_eval.loss,
                summary.final_eval.frame_accuracy()
            );
            println!("metrics {}", summary.metrics_path.display());
            println!("checkpoint {}", summary.checkpoint_path.display());
        }
        Command::Eval { checkpoint } => {
            let mut cfg = match (&cli.config, &cli.out) {
                (None, Some(dir)) if dir.join("config.resolved").exists() => {
                    ExperimentConfig::read(&dir.join("config.resolved"), cli.seed, Some(dir))?
                }
                _ => experiment(cli)?,
            };
            let path = checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("model.ckpt"));
            let (params, network) = load_model(&path)?;
            cfg.network = network;
            cfg.validate()?;
            let data = generate_task(&cfg.task)?;
            let eval = batch_loss(&params, &cfg.network, &Batch::new(data.eval))?;
            if !eval.loss.is_finite() {
                return Err(Error::NonFinite(format!("eval loss {}", eval.loss)));
            }
            println!(
                "eval loss {:.6} frame_acc {:.4} frames {}",
                eval.loss,
                eval.frame_accuracy(),
                eval.compared
            );
        }
        Command::Gradcheck {
            sequences,
            max_elements,
            step,
            tolerance,
        } => {
            let cfg = experiment(cli)?;
            let params = init_params(&cfg)?;
            let batch = first(&generate_task(&cfg.task)?.train, *sequences);
            let opts = GradCheckOptions {
                step: *step,
                tolerance: *tolerance,
                max_elements: *max_elements,
                seed: cfg.seed,
            };
            let report = grad_check_with(&params, &cfg.network, &batch, opts, |p, c, b| {
                Ok(batch_loss_and_grad(p, c, b)?.1)
            })?;
            println!(
                "checked {} of {} elements; max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
                report.checked,
                report.total,
                report.max_rel_error,
                report.worst_tensor,
                report.worst_offset,
                report.worst_analytic,
                report.worst_numeric
            );
            if !report.passed() {
                println!("FAIL: tolerance {:e}", report.tolerance);
                return Ok(Outcome::NumericFailure);
            }
            println!("PASS: tolerance {:e}", report.tolerance);
        }
        Command::Countops { csv } => {
            let rows = match &cli.config {
                Some(_) => {
                    let cfg = experiment(cli)?;
                    let name = format!("{}-{}", cfg.network.variant, cfg.network.num_layers);
                    vec![(name, count_ops(&cfg.network)?)]
                }
                None => production_rows()?,
            };
            if *csv {
                print!("{}", render_csv(&rows));
            } else {
                print!("{}", render_table(&rows));
            }
        }
        Command::Bench {
            frames,
            schedules,
            padding_us,
        } => {
            let cfg = experiment(cli)?;
            let schedules = schedules
                .split(',')
                .map(str::parse)
                .collect::<ltlstm::Result<Vec<LaneSchedule>>>()?;
            let params = init_params(&cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(3);
            let xs: Vec<Vector> = (0..*frames)
                .map(|_| ltlstm::numerics::uniform_vec(cfg.network.input_dim, 1.0, &mut rng))
                .collect();
            let opts = PipelineOptions {
                time_lane_padding: std::time::Duration::from_micros(*padding_us),
                ..Default::default()
            };
            let report = pipeline_bench(&params, &cfg.network, &xs, &schedules, opts)?;
            let csv = report.to_csv();
            print!("{csv}");
            let path = write_out(&cfg.out_dir, "bench.csv", &csv)?;
            log::info!("wrote {}", path.display());
            if !report.outputs_identical {
                println!("outputs differ across schedules");
                return Ok(Outcome::NumericFailure);
            }
        }
        Command::Probe => {
            let cfg = experiment(cli)?;
            let params = init_params(&cfg)?;
            let batch = first(&generate_task(&cfg.task)?.train, cfg.train.batch_size);
            let profile = grad_norm_probe(&params, &cfg.network, &batch)?;
            if profile.norms.iter().any(|n| !n.is_finite()) {
                return Err(Error::NonFiniteGradient("probe norms".into()));
            }
            let csv = profile.to_csv();
            print!("{csv}");
            write_out(&cfg.out_dir, "probe.csv", &csv)?;
            match profile.ratio() {
                Some(r) => println!("bottom/top ratio {r:.6e}"),
                None => println!("bottom/top ratio undefined (top norm is zero)"),
            }
        }
        Command::GenData => {
            let cfg = experiment(cli)?;
            let TaskData { train, eval } = generate_task(&cfg.task)?;
            let a = write_out(&cfg.out_dir, "train.csv", &sequences_csv(&train))?;
            let b = write_out(&cfg.out_dir, "eval.csv", &sequences_csv(&eval))?;
            println!("{}\n{}", a.display(), b.display());
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NumericFailure) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) | Error::NonFiniteGradient(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
