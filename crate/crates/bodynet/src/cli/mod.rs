//! Command-line pipeline around the library: generate data, ingest
//! recordings, train, evaluate, trace trajectories, sweep ablations, and
//! verify gradients.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 training divergence,
//! 4 artifact mismatch (unreadable or inconsistent checkpoint), 5 gradient
//! check failure, 1 other runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use crate::dataio::{
    align_by_jumps, apply_offset, load_manifest, load_stream, load_truth, make_windows, resample,
    save_manifest, write_stream, write_truth, DeviceWindow, ImuSample, PoseSample,
    SequenceManifest, WalkingMode,
};
use crate::diffnet::checkpoint::{config_digest, digest_hex};
use crate::evaluator::{
    ate, integrate_trajectory, pdr_baseline, pointwise_errors, rte, MetricsReport,
    SequenceMetrics, Trajectory,
};
use crate::model::{batch_inputs, loss_gradcheck, AblationConfig, Network};
use crate::synthgen::{generate, preset};
use crate::trainer::{split_dataset, train, load_trained, SequenceData, TrainConfig, TrainError};

/// Environment variable naming the directory searched for `train.toml`
/// when `--config` is omitted.
pub const CONFIG_DIR_ENV: &str = "BODYNET_CONFIG_DIR";

/// Hidden hook for exercising the gradcheck failure path: set to a
/// component name (or `all`) to corrupt its reported error.
const GRADCHECK_CORRUPT_ENV: &str = "BODYNET_GRADCHECK_CORRUPT";

const DEFAULT_RATE_HZ: f64 = 25.0;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unparseable config, missing input data.
    Usage(String),
    /// Training produced a non-finite loss.
    Diverged(String),
    /// Checkpoint unreadable or inconsistent with the dataset.
    Mismatch(String),
    /// Gradient verification exceeded a threshold.
    Gradcheck(Vec<String>),
    /// Everything else (I/O and data-content failures).
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Gradcheck(_) => 5,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => format!("error: {m}"),
            CliError::Diverged(m) => format!("error: {m}"),
            CliError::Mismatch(m) => format!("error: artifact mismatch: {m}"),
            CliError::Gradcheck(components) => {
                format!("error: gradient check failed: {}", components.join(", "))
            }
            CliError::Runtime(m) => format!("error: {m}"),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Config { .. } | TrainError::TooFewSequences { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "bodynet",
    version,
    about = "Multi-device wearable inertial localization pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic walking sequence (device CSVs, truth, manifest).
    Simulate {
        /// Walking mode tag (STW, PVW, MVW, DRW, DLW).
        #[arg(long)]
        mode: String,
        /// Sequence length in seconds.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for the sequence files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Align device clocks by their jump bumps and resample a recorded
    /// sequence directory into a new one.
    Ingest {
        /// Sequence directory containing manifest.toml.
        #[arg(long)]
        dir: PathBuf,
        /// Working sample rate after resampling.
        #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
        rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory of sequence subdirectories.
    Train {
        /// Training config (TOML). Falls back to train.toml under
        /// $BODYNET_CONFIG_DIR when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for model.ckpt and report.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Dotted-path config override, e.g. ablation.contrast_fe=false.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
        rate: f64,
        /// Window stride in samples; defaults to a quarter window.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Evaluate a checkpoint over every sequence in a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for report.txt, sequences.csv, and cdf.csv.
        #[arg(long)]
        out: PathBuf,
        /// Add a dead-reckoning baseline; the only recognized value is pdr.
        #[arg(long)]
        baseline: Option<String>,
        /// Write the pooled error CDF to this path instead of out/cdf.csv.
        #[arg(long)]
        cdf: Option<PathBuf>,
        /// Interval for the relative trajectory error, seconds.
        #[arg(long, default_value_t = 60.0)]
        interval: f64,
        #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
        rate: f64,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Write the predicted trajectory of one sequence as CSV.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequence directory containing manifest.toml.
        #[arg(long)]
        sequence: PathBuf,
        /// Output CSV path (t, x, y, truth_x, truth_y).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
        rate: f64,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Train and evaluate all six ablation variants with a shared seed.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path for the comparison table.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60.0)]
        interval: f64,
        #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
        rate: f64,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate { mode, duration, seed, out } => simulate(&mode, duration, seed, &out),
        Command::Ingest { dir, rate, out } => ingest(&dir, rate, &out),
        Command::Train { config, data, out, overrides, rate, stride } => {
            run_train(config.as_deref(), &data, &out, &overrides, rate, stride)
        }
        Command::Eval { checkpoint, data, out, baseline, cdf, interval, rate, stride } => {
            run_eval(
                &checkpoint,
                &data,
                &out,
                baseline.as_deref(),
                cdf.as_deref(),
                interval,
                rate,
                stride,
            )
        }
        Command::Trace { checkpoint, sequence, out, rate, stride } => {
            run_trace(&checkpoint, &sequence, &out, rate, stride)
        }
        Command::Ablate { config, data, out, interval, rate, stride } => {
            run_ablate(config.as_deref(), &data, &out, interval, rate, stride)
        }
        Command::Gradcheck { seed } => run_gradcheck(seed),
    }
}

fn print_digest(resolved_config: &str) {
    println!("config digest: {}", digest_hex(&config_digest(resolved_config)));
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

// ---------------------------------------------------------------- simulate

fn simulate(mode: &str, duration: f64, seed: u64, out: &Path) -> CliResult<()> {
    let mode = WalkingMode::from_str(mode).map_err(CliError::Usage)?;
    let resolved = format!("mode = \"{mode}\"\nduration = {duration}\nseed = {seed}\n");
    print_digest(&resolved);
    let script = preset(mode)
        .and_then(|s| s.with_duration(duration))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let seq = generate(&script, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    seq.save(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "wrote {} devices, {} truth poses to {}",
        seq.streams.len(),
        seq.truth.len(),
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ ingest

fn ingest(dir: &Path, rate: f64, out: &Path) -> CliResult<()> {
    let resolved = format!("dir = {:?}\nrate = {rate}\n", dir.display().to_string());
    print_digest(&resolved);
    let loaded = load_sequence_raw(dir)?;
    let offsets = align_by_jumps(&loaded.streams, &loaded.truth)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut manifest = loaded.manifest;
    std::fs::create_dir_all(out).map_err(|e| io_err("create output directory", e))?;
    for ((entry, stream), offset) in manifest.devices.iter_mut().zip(&loaded.streams).zip(&offsets)
    {
        let aligned = apply_offset(stream, *offset);
        let resampled = resample(&aligned, rate).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_stream(&out.join(&entry.path), &resampled)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        entry.rate_hz = rate;
        println!("{}: offset {:+.4} s, {} samples at {rate} Hz", entry.name, offset, resampled.len());
    }
    write_truth(&out.join(&manifest.truth_path), &loaded.truth)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    save_manifest(&out.join("manifest.toml"), &manifest)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("ingested into {}", out.display());
    Ok(())
}

// ------------------------------------------------------------ data loading

/// One sequence directory, loaded and resampled to the working rate.
pub struct LoadedSequence {
    pub manifest: SequenceManifest,
    /// Per-device streams at the working rate, manifest order.
    pub streams: Vec<Vec<ImuSample>>,
    pub truth: Vec<PoseSample>,
    pub windows: Vec<DeviceWindow>,
}

struct RawSequence {
    manifest: SequenceManifest,
    streams: Vec<Vec<ImuSample>>,
    truth: Vec<PoseSample>,
}

fn load_sequence_raw(dir: &Path) -> CliResult<RawSequence> {
    let manifest_path = dir.join("manifest.toml");
    if !manifest_path.is_file() {
        return Err(CliError::Usage(format!("no manifest.toml under {}", dir.display())));
    }
    let manifest = load_manifest(&manifest_path).map_err(|e| CliError::Usage(e.to_string()))?;
    manifest.verify_files(dir).map_err(|e| CliError::Usage(e.to_string()))?;
    let streams = manifest
        .devices
        .iter()
        .map(|d| load_stream(&dir.join(&d.path)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let truth =
        load_truth(&dir.join(&manifest.truth_path)).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(RawSequence { manifest, streams, truth })
}

fn load_sequence(dir: &Path, rate: f64, window: usize, stride: usize) -> CliResult<LoadedSequence> {
    let raw = load_sequence_raw(dir)?;
    let streams = raw
        .streams
        .iter()
        .map(|s| resample(s, rate))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let windows = make_windows(&streams, &raw.truth, window, stride)
        .map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    Ok(LoadedSequence { manifest: raw.manifest, streams, truth: raw.truth, windows })
}

/// Loads every sequence subdirectory (sorted by name) under `dir`; a
/// directory that itself holds a manifest counts as a single sequence.
pub fn load_dataset(
    dir: &Path,
    rate: f64,
    window: usize,
    stride: usize,
) -> CliResult<Vec<LoadedSequence>> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("data directory {} does not exist", dir.display())));
    }
    if dir.join("manifest.toml").is_file() {
        return Ok(vec![load_sequence(dir, rate, window, stride)?]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err("read data directory", e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.toml").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(CliError::Usage(format!(
            "no sequences (subdirectories with manifest.toml) under {}",
            dir.display()
        )));
    }
    subdirs.iter().map(|d| load_sequence(d, rate, window, stride)).collect()
}

fn to_sequence_data(seqs: &[LoadedSequence]) -> Vec<SequenceData> {
    seqs.iter()
        .map(|s| SequenceData {
            sequence_id: s.manifest.sequence_id.clone(),
            mode: s.manifest.mode,
            windows: s.windows.clone(),
        })
        .collect()
}

fn stride_for(window: usize, stride: Option<usize>) -> usize {
    stride.unwrap_or_else(|| (window / 4).max(1))
}

// ------------------------------------------------------------------- train

fn resolve_config_path(config: Option<&Path>) -> CliResult<PathBuf> {
    if let Some(p) = config {
        return Ok(p.to_path_buf());
    }
    if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
        let p = Path::new(&dir).join("train.toml");
        if p.is_file() {
            return Ok(p);
        }
        return Err(CliError::Usage(format!(
            "no train.toml under {CONFIG_DIR_ENV}={dir}"
        )));
    }
    Err(CliError::Usage(format!(
        "--config is required (or set {CONFIG_DIR_ENV})"
    )))
}

fn load_config(config: Option<&Path>, overrides: &[String]) -> CliResult<TrainConfig> {
    let path = resolve_config_path(config)?;
    let mut cfg = TrainConfig::load(&path).map_err(|e| CliError::Usage(e.to_string()))?;
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {ov:?} is not KEY=VALUE")))?;
        cfg = cfg.with_override(key, value).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(cfg)
}

/// Splits into (train, validation, test) window sets at sequence granularity.
fn split_windows(
    cfg: &TrainConfig,
    seqs: &[LoadedSequence],
) -> CliResult<(Vec<DeviceWindow>, Vec<DeviceWindow>, Vec<usize>)> {
    let data = to_sequence_data(seqs);
    let split = split_dataset(&data, cfg.split, cfg.seed)?;
    let gather = |idx: &[usize]| -> Vec<DeviceWindow> {
        idx.iter().flat_map(|&i| data[i].windows.iter().cloned()).collect()
    };
    Ok((gather(&split.train), gather(&split.val), split.test))
}

fn run_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    overrides: &[String],
    rate: f64,
    stride: Option<usize>,
) -> CliResult<()> {
    let cfg = load_config(config, overrides)?;
    println!("config digest: {}", cfg.digest());
    println!("variant: {}", cfg.ablation.label());
    let stride = stride_for(cfg.model.window, stride);
    let seqs = load_dataset(data, rate, cfg.model.window, stride)?;
    let (train_set, val_set, _) = split_windows(&cfg, &seqs)?;
    std::fs::create_dir_all(out).map_err(|e| io_err("create output directory", e))?;
    let ckpt = out.join("model.ckpt");
    let report = train(&cfg, &train_set, &val_set, &ckpt)?;
    report.write_jsonl(&out.join("report.jsonl"))?;
    let best = &report.epochs[report.best_epoch];
    println!(
        "trained {} epochs ({} steps); best epoch {} with validation loss {:.6}",
        report.epochs.len(),
        report.steps,
        report.best_epoch,
        best.val.total
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

// -------------------------------------------------------------------- eval

fn load_model(checkpoint: &Path) -> CliResult<(crate::ParameterSet, TrainConfig, Network)> {
    let (params, cfg) =
        load_trained(checkpoint).map_err(|e| CliError::Mismatch(e.to_string()))?;
    let net = Network::new(cfg.model.clone(), cfg.ablation)
        .map_err(|e| CliError::Mismatch(e.to_string()))?;
    Ok((params, cfg, net))
}

fn check_compatible(cfg: &TrainConfig, seq: &LoadedSequence) -> CliResult<()> {
    let id = &seq.manifest.sequence_id;
    let Some(w) = seq.windows.first() else {
        return Err(CliError::Usage(format!("sequence {id} produced no windows")));
    };
    if w.device_data.len() != cfg.model.devices {
        return Err(CliError::Mismatch(format!(
            "sequence {id} has {} devices, checkpoint expects {}",
            w.device_data.len(),
            cfg.model.devices
        )));
    }
    if w.device_data[0].len() != cfg.model.window {
        return Err(CliError::Mismatch(format!(
            "sequence {id} windows hold {} samples, checkpoint expects {}",
            w.device_data[0].len(),
            cfg.model.window
        )));
    }
    Ok(())
}

/// Window velocities predicted in inference mode, batched.
fn predict_windows(
    net: &Network,
    params: &mut crate::ParameterSet,
    cfg: &TrainConfig,
    windows: &[DeviceWindow],
) -> CliResult<Vec<[f64; 2]>> {
    use crate::diffnet::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&DeviceWindow> = chunk.iter().collect();
        let (inputs, _) = batch_inputs(&refs).map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut g = Graph::new(params, ChaCha8Rng::seed_from_u64(0), false);
        let nodes: Vec<_> =
            inputs.iter().map(|t| g.tape.leaf(t.shape().to_vec(), t.data().to_vec())).collect();
        let fwd =
            net.forward(&mut g, &nodes, &cfg.loss).map_err(|e| CliError::Runtime(e.to_string()))?;
        let v = g.tape.data(fwd.v);
        for row in 0..chunk.len() {
            out.push([v[row * 2], v[row * 2 + 1]]);
        }
    }
    Ok(out)
}

/// Predicted trajectory for one sequence, anchored at the truth position of
/// the first window start.
fn predict_trajectory(
    net: &Network,
    params: &mut crate::ParameterSet,
    cfg: &TrainConfig,
    seq: &LoadedSequence,
) -> CliResult<(Trajectory, Trajectory)> {
    let truth =
        Trajectory::from_truth(&seq.truth).map_err(|e| CliError::Runtime(e.to_string()))?;
    let velocities = predict_windows(net, params, cfg, &seq.windows)?;
    let t_starts: Vec<f64> = seq.windows.iter().map(|w| w.t_start).collect();
    let last_end = seq.windows.last().unwrap().t_end();
    let y0 = truth
        .position_at(t_starts[0])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let predicted = integrate_trajectory(&t_starts, last_end, &velocities, y0)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((predicted, truth))
}

struct EvalRow {
    metrics: SequenceMetrics,
    pdr: Option<(f64, f64)>,
}

fn eval_sequences(
    net: &Network,
    params: &mut crate::ParameterSet,
    cfg: &TrainConfig,
    seqs: &[LoadedSequence],
    interval: f64,
    with_pdr: bool,
) -> CliResult<(MetricsReport, Vec<Option<(f64, f64)>>)> {
    let mut rows = Vec::new();
    let mut pooled = Vec::new();
    for seq in seqs {
        check_compatible(cfg, seq)?;
        let (predicted, truth) = predict_trajectory(net, params, cfg, seq)?;
        let seq_ate = ate(&predicted, &truth).map_err(|e| CliError::Runtime(e.to_string()))?;
        let seq_rte =
            rte(&predicted, &truth, interval).map_err(|e| CliError::Runtime(e.to_string()))?;
        pooled.extend(
            pointwise_errors(&predicted, &truth)
                .map_err(|e| CliError::Runtime(e.to_string()))?,
        );
        let pdr = if with_pdr {
            match pdr_metrics(seq, &truth, interval) {
                Ok(m) => Some(m),
                Err(e) => {
                    eprintln!(
                        "warning: pdr baseline failed on {}: {}",
                        seq.manifest.sequence_id,
                        e.message()
                    );
                    None
                }
            }
        } else {
            None
        };
        rows.push(EvalRow {
            metrics: SequenceMetrics {
                id: seq.manifest.sequence_id.clone(),
                mode: seq.manifest.mode,
                ate: seq_ate,
                rte: seq_rte.meters,
                rte_truncated: seq_rte.truncated,
            },
            pdr,
        });
    }
    let pdr_cols: Vec<Option<(f64, f64)>> = rows.iter().map(|r| r.pdr).collect();
    let report = MetricsReport::new(
        rows.into_iter().map(|r| r.metrics).collect(),
        &pooled,
        interval,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((report, pdr_cols))
}

fn pdr_metrics(
    seq: &LoadedSequence,
    truth: &Trajectory,
    interval: f64,
) -> Result<(f64, f64), CliError> {
    let phone = seq
        .manifest
        .devices
        .iter()
        .position(|d| d.name == "phone")
        .unwrap_or(0);
    let path = pdr_baseline(&seq.streams[phone], crate::evaluator::pdr::STEP_LENGTH_M)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    // Dead reckoning starts at the origin; shift it onto the truth start.
    let start = truth
        .position_at(path.start_time().max(truth.start_time()))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let anchored = path.translated(start);
    let a = ate(&anchored, truth).map_err(|e| CliError::Runtime(e.to_string()))?;
    let r = rte(&anchored, truth, interval).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((a, r.meters))
}

/// Per-sequence CSV, with baseline columns appended when present.
fn eval_csv(report: &MetricsReport, pdr: &[Option<(f64, f64)>], with_pdr: bool) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    if with_pdr {
        out.push_str("id,mode,ate_m,rte_m,pdr_ate_m,pdr_rte_m\n");
    } else {
        out.push_str("id,mode,ate_m,rte_m\n");
    }
    for (s, p) in report.sequences.iter().zip(pdr) {
        write!(out, "{},{},{:.6},{:.6}", s.id, s.mode, s.ate, s.rte).unwrap();
        if with_pdr {
            match p {
                Some((a, r)) => write!(out, ",{a:.6},{r:.6}").unwrap(),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn run_eval(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    baseline: Option<&str>,
    cdf: Option<&Path>,
    interval: f64,
    rate: f64,
    stride: Option<usize>,
) -> CliResult<()> {
    let with_pdr = match baseline {
        None => false,
        Some("pdr") => true,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown baseline {other:?}; the only recognized value is pdr"
            )))
        }
    };
    let (mut params, cfg, net) = load_model(checkpoint)?;
    println!("config digest: {}", cfg.digest());
    let stride = stride_for(cfg.model.window, stride);
    let seqs = load_dataset(data, rate, cfg.model.window, stride)?;
    let (report, pdr_cols) = eval_sequences(&net, &mut params, &cfg, &seqs, interval, with_pdr)?;

    std::fs::create_dir_all(out).map_err(|e| io_err("create output directory", e))?;
    let mut text = report.text();
    if with_pdr {
        use std::fmt::Write as _;
        writeln!(text, "\npdr baseline ({} m per step):", crate::evaluator::pdr::STEP_LENGTH_M)
            .unwrap();
        for (s, p) in report.sequences.iter().zip(&pdr_cols) {
            match p {
                Some((a, r)) => {
                    writeln!(text, "{:<24} pdr {:>10.4} {:>10.4}", s.id, a, r).unwrap()
                }
                None => writeln!(text, "{:<24} pdr (failed)", s.id).unwrap(),
            }
        }
    }
    print!("{text}");
    std::fs::write(out.join("report.txt"), &text).map_err(|e| io_err("write report.txt", e))?;
    std::fs::write(out.join("sequences.csv"), eval_csv(&report, &pdr_cols, with_pdr))
        .map_err(|e| io_err("write sequences.csv", e))?;
    let cdf_path = cdf.map(Path::to_path_buf).unwrap_or_else(|| out.join("cdf.csv"));
    report
        .write_cdf_csv(&cdf_path)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("wrote {}", out.join("report.txt").display());
    Ok(())
}

// ------------------------------------------------------------------- trace

fn run_trace(
    checkpoint: &Path,
    sequence: &Path,
    out: &Path,
    rate: f64,
    stride: Option<usize>,
) -> CliResult<()> {
    let (mut params, cfg, net) = load_model(checkpoint)?;
    println!("config digest: {}", cfg.digest());
    let stride = stride_for(cfg.model.window, stride);
    let seq = load_sequence(sequence, rate, cfg.model.window, stride)?;
    check_compatible(&cfg, &seq)?;
    let (predicted, truth) = predict_trajectory(&net, &mut params, &cfg, &seq)?;
    let mut csv = String::from("t,x,y,truth_x,truth_y\n");
    for (t, p) in predicted.timestamps().iter().zip(predicted.positions()) {
        let q = truth.position_at(*t).map_err(|e| CliError::Runtime(e.to_string()))?;
        use std::fmt::Write as _;
        writeln!(csv, "{t:.4},{:.6},{:.6},{:.6},{:.6}", p[0], p[1], q[0], q[1]).unwrap();
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err("create output directory", e))?;
    }
    std::fs::write(out, csv).map_err(|e| io_err("write trace", e))?;
    let end = predicted.endpoint();
    println!(
        "traced {} windows; endpoint ({:.3}, {:.3}) m, truth ({:.3}, {:.3}) m",
        seq.windows.len(),
        end[0],
        end[1],
        truth.endpoint()[0],
        truth.endpoint()[1]
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ------------------------------------------------------------------ ablate

fn run_ablate(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    interval: f64,
    rate: f64,
    stride: Option<usize>,
) -> CliResult<()> {
    let base = load_config(config, &[])?;
    println!("config digest: {}", base.digest());
    let stride = stride_for(base.model.window, stride);
    let seqs = load_dataset(data, rate, base.model.window, stride)?;
    let (train_set, val_set, test_idx) = split_windows(&base, &seqs)?;
    let test_seqs: Vec<&LoadedSequence> = test_idx.iter().map(|&i| &seqs[i]).collect();

    let mut csv = String::from(
        "variant,contrast_fe,weighted_gf,attentive_la,val_loss,ate_m,rte_m,status\n",
    );
    let mut any_failed = false;
    let tmp = tempdir_in_out(out)?;
    for row in 1usize..=6 {
        let ablation = AblationConfig::variant(row).map_err(|e| CliError::Usage(e.to_string()))?;
        let cfg = TrainConfig { ablation, ..base.clone() };
        let ckpt = tmp.join(format!("variant{row}.ckpt"));
        use std::fmt::Write as _;
        write!(
            csv,
            "{row},{},{},{}",
            ablation.contrast_fe, ablation.weighted_gf, ablation.attentive_la
        )
        .unwrap();
        match train(&cfg, &train_set, &val_set, &ckpt) {
            Ok(report) => {
                let (mut params, _) =
                    load_trained(&ckpt).map_err(|e| CliError::Runtime(e.to_string()))?;
                let net = Network::new(cfg.model.clone(), cfg.ablation)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                let mut ates = Vec::new();
                let mut rtes = Vec::new();
                for seq in &test_seqs {
                    check_compatible(&cfg, seq)?;
                    let (predicted, truth) = predict_trajectory(&net, &mut params, &cfg, seq)?;
                    ates.push(ate(&predicted, &truth).map_err(|e| CliError::Runtime(e.to_string()))?);
                    rtes.push(
                        rte(&predicted, &truth, interval)
                            .map_err(|e| CliError::Runtime(e.to_string()))?
                            .meters,
                    );
                }
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
                writeln!(
                    csv,
                    ",{:.6},{:.6},{:.6},ok",
                    report.epochs[report.best_epoch].val.total,
                    mean(&ates),
                    mean(&rtes)
                )
                .unwrap();
                println!("variant {row} ({}): ate {:.4} m", ablation.label(), mean(&ates));
            }
            Err(TrainError::Diverged { component, step }) => {
                any_failed = true;
                eprintln!(
                    "warning: variant {row} diverged at step {step} (non-finite {component})"
                );
                writeln!(csv, ",,,,failed").unwrap();
            }
            Err(other) => return Err(other.into()),
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err("create output directory", e))?;
    }
    std::fs::write(out, &csv).map_err(|e| io_err("write ablation table", e))?;
    print!("{csv}");
    if any_failed {
        eprintln!("warning: at least one variant diverged; its row is marked failed");
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Checkpoint scratch space beside the output table.
fn tempdir_in_out(out: &Path) -> CliResult<PathBuf> {
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .join(".ablate-checkpoints");
    std::fs::create_dir_all(&dir).map_err(|e| io_err("create checkpoint directory", e))?;
    Ok(dir)
}

// --------------------------------------------------------------- gradcheck

fn run_gradcheck(seed: u64) -> CliResult<()> {
    print_digest(&format!("gradcheck_seed = {seed}\n"));
    let mut checks =
        crate::diffnet::layer_suite(seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    for row in 1usize..=6 {
        checks.push(loss_gradcheck(row, seed).map_err(|e| CliError::Runtime(e.to_string()))?);
    }
    if let Ok(target) = std::env::var(GRADCHECK_CORRUPT_ENV) {
        for c in &mut checks {
            if target == "all" || c.component == target {
                c.max_rel_err += 1.0;
            }
        }
    }
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "{:<22} max rel err {:>12.3e}  threshold {:>8.0e}  {}",
            c.component,
            c.max_rel_err,
            c.threshold,
            if c.passed() { "ok" } else { "FAIL" }
        );
        if !c.passed() {
            failed.push(c.component.clone());
        }
    }
    if failed.is_empty() {
        println!("all gradients verified");
        Ok(())
    } else {
        Err(CliError::Gradcheck(failed))
    }
}
