//! Command-line entry point wiring capture → train → eval → serve.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use foostate_core::dataset::{self, CaptureOptions};
use foostate_core::eval::{self, latency_bench};
use foostate_core::nn::{save_model, train, TrainConfig};
use foostate_core::pipeline::{self, serve, FrameSource, ServeConfig};
use foostate_core::rods::RodId;
use foostate_core::sim::{random_state, render_frame, RenderOptions, WhiteRotationBias};
use foostate_core::table::{default_table_geometry, load_geometry, save_geometry, TableGeometry};

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "foostate",
    about = "Foosball game-state detection testbed: synthetic capture, per-rod regressors, telemetry",
    long_about = None,
    version
)]
struct Cli {
    /// Table geometry config (TOML); built-in defaults when omitted
    #[arg(long, global = true)]
    geometry: Option<PathBuf>,
    /// Seed for all randomized steps
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run config (TOML); its values override the corresponding flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default table geometry config
    Geometry(GeometryArgs),
    /// Capture a labeled synthetic dataset
    Capture(CaptureArgs),
    /// Train per-rod regressors on a captured dataset
    Train(TrainArgs),
    /// Evaluate trained models and gate them against the system requirements
    Eval(EvalArgs),
    /// Benchmark inference latency
    Bench(BenchArgs),
    /// Run the live detection loop and publish game states
    Serve(ServeArgs),
}

#[derive(Args)]
struct GeometryArgs {
    /// Output path for the geometry TOML
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CaptureArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Number of frames to capture
    #[arg(long, default_value_t = 500)]
    frames: usize,
    /// Capture options TOML (render, noise, bias); defaults when omitted
    #[arg(long)]
    sim_config: Option<PathBuf>,
    /// Probability a black rod is still in flight at the shutter
    #[arg(long)]
    p_still_moving: Option<f64>,
    /// Binarization threshold of the shift detector (0-256)
    #[arg(long)]
    cv_threshold: Option<u16>,
    /// Minimum dark-run length of the shift detector, px
    #[arg(long)]
    cv_min_run: Option<usize>,
    /// Box-blur radius along the rod axis, px
    #[arg(long)]
    blur: Option<u32>,
    /// Brightness offset applied to every pixel
    #[arg(long)]
    brightness: Option<i16>,
    /// Leave the ball out of the rendered frames
    #[arg(long)]
    no_ball: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Captured dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Rod to train (`black_goal` ... `white_striker`) or `all`
    #[arg(long)]
    rod: String,
    /// Output model file (single rod) or directory (`all`)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Training fraction of the train/validation split
    #[arg(long, default_value_t = 0.8)]
    split: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Captured dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Directory holding the eight per-rod model files
    #[arg(long)]
    models: PathBuf,
    /// Prefix for the report files (`<prefix>.txt`, `<prefix>.json`)
    #[arg(long, default_value = "report")]
    out_prefix: String,
    /// Training fraction used to recover the validation split
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 8)]
    bench_frames: usize,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// Benchmark with per-rod parallel fan-out instead of the sequential
    /// baseline
    #[arg(long)]
    parallel: bool,
    /// Skip the latency benchmark; the report then gates the two error
    /// criteria only and its JSON is bit-reproducible
    #[arg(long)]
    no_bench: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory holding the eight per-rod model files
    #[arg(long)]
    models: PathBuf,
    /// Number of distinct synthetic frames to cycle through
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// Per-rod parallel fan-out
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    parallel: OnOff,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceKind {
    Sim,
    Replay,
}

#[derive(Args)]
struct ServeArgs {
    /// Directory holding the eight per-rod model files
    #[arg(long)]
    models: PathBuf,
    /// TCP endpoint to publish on, host:port
    #[arg(long, default_value = "127.0.0.1:7447")]
    endpoint: String,
    /// Optional line-oriented stats endpoint, host:port
    #[arg(long)]
    stats_endpoint: Option<String>,
    #[arg(long, value_enum, default_value_t = SourceKind::Sim)]
    source: SourceKind,
    /// Dataset directory (replay source)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Stop after this many frames (simulator source; replay always stops at
    /// the end of the dataset)
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long, default_value_t = 60.0)]
    fps: f64,
    /// Fan rod inference out across threads
    #[arg(long)]
    parallel_rods: bool,
    /// Frame-id-derived timestamps and zeroed inference_ms for reproducible
    /// payloads
    #[arg(long)]
    deterministic_timing: bool,
}

/// A problem with how the command was invoked (missing files, bad ids);
/// mapped to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_geometry_arg(path: &Option<PathBuf>) -> Result<TableGeometry> {
    match path {
        None => Ok(default_table_geometry()),
        Some(p) => {
            if !p.is_file() {
                return Err(usage(format!("geometry file {} not found", p.display())));
            }
            load_geometry(p).with_context(|| format!("loading geometry {}", p.display()))
        }
    }
}

/// Apply `--config` overrides: any key in the TOML table replaces the
/// matching flag value.
fn config_overrides(cli: &mut Cli) -> Result<()> {
    let Some(path) = cli.config.clone() else { return Ok(()) };
    if !path.is_file() {
        return Err(usage(format!("config file {} not found", path.display())));
    }
    let text = std::fs::read_to_string(&path)?;
    let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    for (key, value) in &table {
        let mut known = true;
        match (key.as_str(), &mut cli.command) {
            ("seed", _) => cli.seed = value.as_integer().context("seed must be an integer")? as u64,
            ("verbose", _) => cli.verbose = value.as_bool().context("verbose must be a bool")?,
            ("geometry", _) => {
                cli.geometry = Some(PathBuf::from(value.as_str().context("geometry must be a path")?))
            }
            ("frames", Command::Capture(a)) => a.frames = value.as_integer().context("frames")? as usize,
            ("p_still_moving", Command::Capture(a)) => {
                a.p_still_moving = Some(value.as_float().context("p_still_moving")?)
            }
            ("cv_threshold", Command::Capture(a)) => {
                a.cv_threshold = Some(value.as_integer().context("cv_threshold")? as u16)
            }
            ("cv_min_run", Command::Capture(a)) => {
                a.cv_min_run = Some(value.as_integer().context("cv_min_run")? as usize)
            }
            ("epochs", Command::Train(a)) => a.epochs = value.as_integer().context("epochs")? as usize,
            ("lr", Command::Train(a)) => a.lr = value.as_float().context("lr")?,
            ("batch_size", Command::Train(a)) => {
                a.batch_size = value.as_integer().context("batch_size")? as usize
            }
            ("split", Command::Train(a)) => a.split = value.as_float().context("split")?,
            ("split", Command::Eval(a)) => a.split = value.as_float().context("split")?,
            ("reps", Command::Bench(a)) => a.reps = value.as_integer().context("reps")? as usize,
            ("warmup", Command::Bench(a)) => a.warmup = value.as_integer().context("warmup")? as usize,
            ("fps", Command::Serve(a)) => a.fps = value.as_float().context("fps")?,
            ("frames", Command::Serve(a)) => a.frames = Some(value.as_integer().context("frames")? as u64),
            ("endpoint", Command::Serve(a)) => a.endpoint = value.as_str().context("endpoint")?.to_string(),
            _ => known = false,
        }
        if !known {
            eprintln!("config: ignoring unknown key `{key}`");
        }
    }
    Ok(())
}

fn cmd_geometry(args: &GeometryArgs, geometry: &TableGeometry) -> Result<u8> {
    save_geometry(geometry, &args.out)?;
    println!("wrote geometry config to {}", args.out.display());
    Ok(EXIT_OK)
}

fn cmd_capture(args: &CaptureArgs, geometry: &TableGeometry, seed: u64, verbose: bool) -> Result<u8> {
    let mut options = match &args.sim_config {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(format!("sim config {} not found", path.display())));
            }
            dataset::load_capture_options(path)?
        }
        None => CaptureOptions::default(),
    };
    if let Some(p) = args.p_still_moving {
        options.p_still_moving = p;
    }
    if let Some(t) = args.cv_threshold {
        options.cv_threshold = t;
    }
    if let Some(m) = args.cv_min_run {
        options.cv_min_run = m;
    }
    if let Some(b) = args.blur {
        options.render.blur_radius = b;
    }
    if let Some(b) = args.brightness {
        options.render.brightness_offset = b;
    }
    if args.no_ball {
        options.render.render_ball = false;
    }
    let ds = dataset::capture(args.frames, geometry, &options, seed, &args.out)?;
    let flagged = dataset::validate_shifts(&ds, 5.0);
    println!(
        "captured {} frames into {} ({} flagged by motor/CV validation)",
        ds.records.len(),
        args.out.display(),
        flagged.len()
    );
    if verbose && !flagged.is_empty() {
        eprintln!("flagged frames: {flagged:?}");
    }
    Ok(EXIT_OK)
}

fn train_one(
    ds: &dataset::Dataset,
    rod: RodId,
    cfg: &TrainConfig,
    out_file: &Path,
    verbose: bool,
) -> Result<()> {
    let samples = dataset::rod_training_samples(ds, rod)?;
    let (w, h) = (ds.options.render.cutout_w as usize, ds.options.render.cutout_h as usize);
    let (model, history) = train(rod, w, h, &samples, cfg)?;
    save_model(&model, out_file)?;
    let history_path = out_file.with_extension("history.json");
    std::fs::write(&history_path, serde_json::to_string_pretty(&history)?)?;
    let last = history.last().expect("at least one epoch");
    println!(
        "{rod}: {} epochs, train loss {:.5}, val loss {:.5} -> {}",
        history.len(),
        last.train_loss,
        last.val_loss,
        out_file.display()
    );
    if verbose {
        for e in &history {
            eprintln!("{rod} epoch {:>3}: train {:.6} val {:.6}", e.epoch, e.train_loss, e.val_loss);
        }
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs, seed: u64, verbose: bool) -> Result<u8> {
    if !args.data.is_dir() {
        return Err(usage(format!("dataset directory {} not found", args.data.display())));
    }
    let ds = dataset::load(&args.data)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        split_ratio: args.split,
        seed,
        ..Default::default()
    };
    if args.rod == "all" {
        std::fs::create_dir_all(&args.out)?;
        for id in RodId::ALL {
            train_one(&ds, id, &cfg, &args.out.join(pipeline::model_file_name(id)), verbose)?;
        }
    } else {
        let rod: RodId = args.rod.parse().map_err(|e| usage(format!("{e}")))?;
        if let Some(parent) = args.out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        train_one(&ds, rod, &cfg, &args.out, verbose)?;
    }
    Ok(EXIT_OK)
}

fn load_models_arg(dir: &Path) -> Result<Vec<foostate_core::nn::RegressorModel<f32>>> {
    if !dir.is_dir() {
        return Err(usage(format!("model directory {} not found", dir.display())));
    }
    pipeline::load_model_set(dir).with_context(|| format!("loading models from {}", dir.display()))
}

fn bench_frames(geometry: &TableGeometry, n: usize, seed: u64) -> Result<Vec<image::GrayImage>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n.max(1) as u64)
        .map(|i| {
            let gt = random_state(geometry, &mut rng, Some(&WhiteRotationBias::default()));
            let opts = RenderOptions { seed: seed ^ i, ..Default::default() };
            Ok(render_frame(geometry, &gt, &opts)?)
        })
        .collect()
}

fn cmd_eval(args: &EvalArgs, seed: u64) -> Result<u8> {
    if !args.data.is_dir() {
        return Err(usage(format!("dataset directory {} not found", args.data.display())));
    }
    let ds = dataset::load(&args.data)?;
    let models = load_models_arg(&args.models)?;
    let (_, val_idx) = dataset::split(&ds, args.split, seed);
    if val_idx.is_empty() {
        bail!("validation split is empty; lower --split or capture more frames");
    }
    let per_rod = eval::evaluate_models(&ds, &models, &val_idx)?;
    let latency = if args.no_bench {
        None
    } else {
        let frames = bench_frames(&ds.geometry, args.bench_frames, seed)?;
        Some(latency_bench(&models, &ds.geometry, &frames, args.warmup, args.reps, args.parallel)?)
    };
    let report = eval::build_report("compact", per_rod, latency)?;
    let text = eval::render_report(&report)?;
    let json = eval::report_to_json(&report)?;
    std::fs::write(format!("{}.txt", args.out_prefix), &text)?;
    std::fs::write(format!("{}.json", args.out_prefix), &json)?;
    print!("{text}");
    println!("report written to {0}.txt and {0}.json", args.out_prefix);
    Ok(if report.gate.pass { EXIT_OK } else { EXIT_VALIDATION })
}

fn cmd_bench(args: &BenchArgs, geometry: &TableGeometry, seed: u64) -> Result<u8> {
    let models = load_models_arg(&args.models)?;
    let frames = bench_frames(geometry, args.frames, seed)?;
    let parallel = args.parallel == OnOff::On;
    let latency = latency_bench(&models, geometry, &frames, args.warmup, args.reps, parallel)?;
    println!(
        "mode {}: overall mean {:.2} ms / median {:.2} ms | per rod mean {:.2} ms / median {:.2} ms | fps mean {:.2} / median {:.2}",
        if parallel { "parallel" } else { "sequential" },
        latency.mean_ms,
        latency.median_ms,
        latency.per_rod_mean_ms,
        latency.per_rod_median_ms,
        latency.fps_mean,
        latency.fps_median,
    );
    Ok(EXIT_OK)
}

fn cmd_serve(args: &ServeArgs, geometry: &TableGeometry, seed: u64, verbose: bool) -> Result<u8> {
    let models = load_models_arg(&args.models)?;
    let source = match args.source {
        SourceKind::Sim => FrameSource::Simulator {
            render: RenderOptions::default(),
            white_bias: WhiteRotationBias::default(),
            seed,
            frames: args.frames,
        },
        SourceKind::Replay => {
            let dir = args
                .data
                .as_ref()
                .ok_or_else(|| usage("--source replay requires --data <dataset dir>"))?;
            if !dir.is_dir() {
                return Err(usage(format!("dataset directory {} not found", dir.display())));
            }
            FrameSource::Replay { dataset: dataset::load(dir)? }
        }
    };
    let summary = serve(ServeConfig {
        geometry: geometry.clone(),
        models,
        endpoint: args.endpoint.clone(),
        stats_endpoint: args.stats_endpoint.clone(),
        source,
        parallel_rods: args.parallel_rods,
        target_fps: args.fps,
        deterministic_timing: args.deterministic_timing,
        verbose,
    })?;
    println!(
        "published {} frames ({} skipped, {} tick overruns, {} subscribers at exit, {} drops)",
        summary.frames_published,
        summary.frames_skipped,
        summary.overrun_ticks,
        summary.final_stats.subscribers,
        summary.final_stats.dropped_messages,
    );
    Ok(EXIT_OK)
}

fn run(cli: Cli) -> Result<u8> {
    let geometry = load_geometry_arg(&cli.geometry)?;
    match &cli.command {
        Command::Geometry(args) => cmd_geometry(args, &geometry),
        Command::Capture(args) => cmd_capture(args, &geometry, cli.seed, cli.verbose),
        Command::Train(args) => cmd_train(args, cli.seed, cli.verbose),
        Command::Eval(args) => cmd_eval(args, cli.seed),
        Command::Bench(args) => cmd_bench(args, &geometry, cli.seed),
        Command::Serve(args) => cmd_serve(args, &geometry, cli.seed, cli.verbose),
    }
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    if let Err(e) = config_overrides(&mut cli) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_VALIDATION)
            }
        }
    }
}
