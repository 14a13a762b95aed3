//! The `smarthand` command line. Every subcommand prints a human summary by
//! default and a deterministic JSON document with `--format json`.
//!
//! Exit codes: 0 success, 2 usage, 3 data or file format, 4 model.

mod commands;
pub mod frames;
pub mod render;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::device::transport::Transport;
use crate::device::Mode;
use crate::readout::ScanMode;
use crate::tactile::imu::FusionInput;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_MODEL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Model(_) => EXIT_MODEL,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<crate::nn::Error> for CliError {
    fn from(e: crate::nn::Error) -> Self {
        use crate::nn::Error as E;
        match e {
            E::Format(_) | E::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<crate::tactile::Error> for CliError {
    fn from(e: crate::tactile::Error) -> Self {
        match e {
            crate::tactile::Error::InvalidConfig(m) => CliError::Usage(m),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::readout::Error> for CliError {
    fn from(e: crate::readout::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::device::Error> for CliError {
    fn from(e: crate::device::Error) -> Self {
        use crate::device::Error as E;
        match e {
            E::Model(m) => m.into(),
            E::ClassCount(_) => CliError::Model(e.to_string()),
            E::InvalidConfig(m) => CliError::Usage(m),
            e => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Human,
    Json,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    #[default]
    F32,
    Q15,
}

#[derive(Debug, Parser)]
#[command(name = "smarthand", version, about = "Tactile glove toolkit: readout simulation, device simulation, inference")]
pub struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    pub format: Format,
    /// Random seed; falls back to $SMARTHAND_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-taxel empty-hand thresholds from one or more recordings.
    Calibrate(CalibrateArgs),
    /// Scan a press scenario and report phantom readings.
    SimulateReadout(SimulateReadoutArgs),
    /// Run a scripted firmware session.
    Device(DeviceArgs),
    /// Classify frames.
    Infer(InferArgs),
    /// Report model budgets and time inference.
    Bench(BenchArgs),
    /// Draw frames as text heatmaps.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Empty-hand recordings (SHRC).
    #[arg(required = true)]
    pub recordings: Vec<PathBuf>,
    /// Output calibration file (SHCA).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateReadoutArgs {
    pub scenario: PathBuf,
    #[arg(long, default_value = "nonisolated")]
    pub mode: ScanMode,
    /// Write the scanned frame here (text, or SHRC if the name ends in .shrc).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Hand mask (SHMK) for the ghost metric; defaults to the built-in mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DeviceArgs {
    #[arg(long, default_value = "viz")]
    pub mode: Mode,
    /// Collection target; at most the 4096-frame buffer is used.
    #[arg(long, default_value_t = 4096)]
    pub frames: usize,
    /// Scenario file or SHRC recording; defaults to an untouched glove.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Scan mode for scenario sources.
    #[arg(long, default_value = "isolated")]
    pub scan_mode: ScanMode,
    /// Uniform ADC noise in LSB added to scenario frames.
    #[arg(long, default_value_t = 0)]
    pub noise: u16,
    /// Command script; defaults to `0 r`.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Simulated session length; defaults to 1 s, or until a collection
    /// completes.
    #[arg(long)]
    pub duration_ms: Option<u64>,
    #[arg(long, default_value = "mem")]
    pub transport: Transport,
    /// Write the raw packet stream here.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Collect mode: write the dumped frames and streamed IMU samples as SHRC.
    #[arg(long)]
    pub recording: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub label: u8,
    #[arg(long, default_value_t = 0)]
    pub session: u8,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    pub collect_hz: u32,
    #[arg(long, default_value_t = 10)]
    pub viz_hz: u32,
    #[arg(long, default_value_t = 8)]
    pub infer_hz: u32,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Weight file (SHW1).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Graph file, or `reference` / `reference-imu`. Without it the reference
    /// graph that matches the weights is used.
    #[arg(long)]
    pub graph: Option<String>,
    /// IMU quantity fed to the fusion branch.
    #[arg(long, default_value = "euler")]
    pub fusion: FusionInput,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["frame", "recording"]))]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Text frame or SHRC recording (first frame).
    #[arg(long)]
    pub frame: Option<PathBuf>,
    /// Classify every frame of an SHRC recording.
    #[arg(long)]
    pub recording: Option<PathBuf>,
    /// IMU features `a,b,c` for fusion models.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_triple)]
    pub imu: Option<[f32; 3]>,
    /// Skip frames with no taxel above these thresholds (SHCA).
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    pub iters: u32,
    #[arg(long, value_enum, default_value_t = DTypeArg::F32)]
    pub dtype: DTypeArg,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["frame", "recording"]))]
pub struct RenderArgs {
    #[arg(long)]
    pub frame: Option<PathBuf>,
    #[arg(long)]
    pub recording: Option<PathBuf>,
    /// Playback rate on a terminal; 0 prints every frame at once.
    #[arg(long, default_value_t = 0.0)]
    pub fps: f64,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Write to a file instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn parse_triple(s: &str) -> Result<[f32; 3], String> {
    let v: Vec<f32> = s.split(',').map(|x| x.trim().parse::<f32>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    v.try_into().map_err(|_| format!("expected three comma-separated numbers, got {s:?}"))
}

/// What a command produced: a JSON document and its human rendering.
pub struct Report {
    pub json: serde_json::Value,
    pub human: String,
}

pub(crate) fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SMARTHAND_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("SMARTHAND_SEED={v:?} is not an integer"))),
        Err(_) => Ok(0),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let format = cli.format;
    match commands::dispatch(cli, out) {
        Ok(report) => {
            let res = match format {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report.json).expect("json value")),
                Format::Human => write!(out, "{}", report.human),
            };
            if let Err(e) = res {
                // a closed pipe (`| head`) is the reader's choice, not a failure
                if e.kind() == std::io::ErrorKind::BrokenPipe {
                    return EXIT_OK;
                }
                let _ = writeln!(err, "error: {e}");
                return EXIT_DATA;
            }
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
