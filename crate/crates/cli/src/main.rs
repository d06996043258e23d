//! `vvtrace`: file-based pipeline over volumetric video viewing traces.
//!
//! Exit codes: 0 success, 2 usage, 3 input or data, 4 numeric failure.
//! Every run that gets past argument parsing leaves
//! `<subcommand>.manifest.json` in the output directory.

mod commands;
mod config;
mod manifest;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

use config::RunConfig;
use manifest::{manifest_name, ErrorRecord, Manifest, Run};

/// Keep in step with `vvtrace::FORMAT_VERSION`.
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (format version 1)");

pub const OUT_ENV: &str = "VVTRACE_OUT";

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "vvtrace", version = VERSION, about = "Analytics, ROI, viewport prediction and streaming simulation for 6-DoF volumetric video traces")]
struct Cli {
    /// Output directory [default: $VVTRACE_OUT, else the working directory].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML file overriding the built-in defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 selects the sequential reference path.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Parse a raw trace, map axes into the analysis frame, write canonical CSV.
    Ingest(IngestArgs),
    /// Repair a canonical trace and report what was dropped or masked.
    Validate(ValidateArgs),
    /// Resample a canonical trace onto a uniform clock.
    Resample(ResampleArgs),
    /// Voxelize the scene and compute per-cube ROI levels from gaze.
    Roi(RoiArgs),
    /// Movement distances and rotational acceleration per session and per scene.
    Kinematics(KinematicsArgs),
    /// Aerial dwell heatmap and gaze/trajectory intersection mask.
    Heatmap(HeatmapArgs),
    /// Train the viewport predictor.
    Train(TrainArgs),
    /// Forecast one horizon with a trained predictor.
    Predict(PredictArgs),
    /// Score a trained predictor and the baselines on every window.
    Eval(EvalArgs),
    /// Train and score the full model and each single-component ablation.
    Ablate(AblateArgs),
    /// Cull, allocate and score cube streaming over a budget sweep.
    Simulate(SimulateArgs),
    /// Verify the manifests in a directory and summarize the runs.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Validate(_) => "validate",
            Command::Resample(_) => "resample",
            Command::Roi(_) => "roi",
            Command::Kinematics(_) => "kinematics",
            Command::Heatmap(_) => "heatmap",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::Simulate(_) => "simulate",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    /// Raw trace CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// File listing the 28 source column names in canonical field order.
    #[arg(long)]
    pub columns: Option<PathBuf>,
    /// Axis map such as `x,z,y` or `x,-z,y`.
    #[arg(long)]
    pub axis_map: Option<String>,
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long)]
    pub video: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// mask, clamp or drop.
    #[arg(long)]
    pub gaze_policy: Option<String>,
    #[arg(long)]
    pub min_confidence: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ResampleArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RoiFlags {
    /// Cube edge in metres.
    #[arg(long)]
    pub edge: Option<f64>,
    /// Gaze cone half-angle in degrees.
    #[arg(long)]
    pub half_angle: Option<f64>,
    /// Minimum point count (at reference distance when adaptive).
    #[arg(long)]
    pub tau0: Option<f64>,
    /// Use `tau0` as a fixed point-count threshold.
    #[arg(long)]
    pub fixed_threshold: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RoiArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// PLY files or directories of PLY frames, in frame order.
    #[arg(long, required = true, num_args = 1..)]
    pub scene: Vec<PathBuf>,
    #[command(flatten)]
    pub roi: RoiFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KinematicsArgs {
    /// Canonical trace CSVs; the parent directory names the video.
    #[arg(long, num_args = 1.., required_unless_present = "dataset")]
    pub trace: Vec<PathBuf>,
    /// Directory laid out as `<video>/<user>.csv`, with optional `meta.json`.
    #[arg(long, conflicts_with = "trace")]
    pub dataset: Option<PathBuf>,
    /// Resample every session to this rate before the rotation analysis.
    #[arg(long)]
    pub resample: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub cell: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub floor_z: Option<f64>,
    /// Fixed capture-area grid centred on the origin.
    #[arg(long)]
    pub capture_area: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelFlags {
    /// `default` or `tiny`; replaces the predictor section before other flags apply.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub scene: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub scene: Vec<PathBuf>,
    /// First predicted sample (after resampling); defaults to the last full window.
    #[arg(long)]
    pub at: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub scene: Vec<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub scene: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub scene: Vec<PathBuf>,
    /// oracle, persistence, lagged, linear or model.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Checkpoint for `--predictor model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub lag: Option<usize>,
    /// Bits per frame; repeat for a sweep.
    #[arg(long)]
    pub budget: Vec<f64>,
    /// Frames covered by one prediction.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Frames between prediction refreshes; 1 slides every frame.
    #[arg(long)]
    pub refresh: Option<usize>,
    /// Write per-frame records for every budget.
    #[arg(long)]
    pub frames: bool,
    #[command(flatten)]
    pub roi: RoiFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Directory holding manifests [default: the output directory].
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

fn exit_code(e: &anyhow::Error) -> (i32, &'static str) {
    if e.downcast_ref::<UsageError>().is_some() {
        return (2, "usage");
    }
    match e.downcast_ref::<vvtrace::Error>() {
        Some(v) if v.is_numeric() => (4, "numeric"),
        Some(vvtrace::Error::InvalidConfig(_)) | Some(vvtrace::Error::InvalidMapping(_)) => (2, "usage"),
        _ => (3, "data"),
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn execute(cli: &Cli, run: &mut Run, options: &mut serde_json::Value) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    *options = serde_json::json!({ "command": &cli.command, "config": &cfg, "threads": cli.threads });
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let parallel = cli.threads != Some(1);
    commands::dispatch(&cli.command, cfg, run, options, parallel)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let out = out_dir(&cli);
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create output directory {}: {e}", out.display());
        return ExitCode::from(3);
    }
    let mut run = Run::new(out.clone());
    let mut options = serde_json::Value::Null;
    let result = execute(&cli, &mut run, &mut options);
    let (code, error) = match &result {
        Ok(()) => (0, None),
        Err(e) => {
            let (code, category) = exit_code(e);
            eprintln!("error: {e:#}");
            (code, Some(ErrorRecord { category: category.into(), exit_code: code, message: format!("{e:#}") }))
        }
    };
    let manifest = Manifest {
        tool: "vvtrace".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        format_version: vvtrace::FORMAT_VERSION,
        subcommand: cli.command.name().into(),
        status: if code == 0 { "ok" } else { "error" }.into(),
        options,
        inputs: run.inputs,
        outputs: run.outputs,
        error,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(e) = std::fs::write(out.join(manifest_name(cli.command.name())), text) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(if code == 0 { 3 } else { code as u8 });
    }
    ExitCode::from(code as u8)
}
