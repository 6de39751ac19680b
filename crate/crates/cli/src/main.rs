//! `rppg` command line: synthesize test clips, run the pulse model, score
//! predictions, and evaluate heart-rate agreement. Data goes to stdout or to
//! files; diagnostics go to stderr as one JSON object per failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        CliError { code: code.into(), message: message.into() }
    }
}

impl From<rppg_core::Error> for CliError {
    fn from(e: rppg_core::Error) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::new("csv", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("json", e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "rppg", version, about = "Video-to-pulse inference and evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic skin clip with a known pulse.
    Synth(SynthArgs),
    /// Run the model on a stored clip and write the predicted waveform.
    Forward(ForwardArgs),
    /// Score a predicted waveform against a reference.
    Loss(LossArgs),
    /// Estimate heart rate from a waveform.
    Hr(HrArgs),
    /// Aggregate agreement metrics over prediction/reference pairs.
    Eval(EvalArgs),
    /// Run a classical extractor (POS or GREEN) on a clip.
    Baseline(BaselineArgs),
    /// Export attention scores, routing, and refined weights for one block.
    AttnDump(AttnDumpArgs),
    /// Report parameter and multiply-accumulate counts for a config.
    Summary(SummaryArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Pulse rate in bpm (start of ramp when --hr-end is given).
    #[arg(long, default_value_t = 75.0)]
    hr: f64,
    /// Final bpm of a linear ramp.
    #[arg(long)]
    hr_end: Option<f64>,
    #[arg(long, default_value_t = 160)]
    frames: usize,
    #[arg(long, default_value_t = 72)]
    height: usize,
    #[arg(long, default_value_t = 72)]
    width: usize,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Peak pulse modulation in intensity units.
    #[arg(long, default_value_t = 3.0)]
    amplitude: f64,
    /// Standard deviation of the additive pixel noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Peak-to-peak camera sway in pixels.
    #[arg(long, default_value_t = 0.0)]
    motion: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Base name for the clip and waveform files.
    #[arg(long, default_value = "clip")]
    name: String,
}

#[derive(clap::Args)]
struct ForwardArgs {
    /// Path to a TOML run config, or the literal `default`.
    #[arg(long, default_value = "default")]
    config: String,
    /// Clip header written by `synth`.
    #[arg(long)]
    clip: PathBuf,
    /// Checkpoint manifest; omitted means random init from the config seed.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "pred")]
    name: String,
}

#[derive(clap::Args)]
struct LossArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    w_time: f64,
    #[arg(long, default_value_t = 1.0)]
    w_freq: f64,
    #[arg(long, default_value_t = 1.0)]
    w_hr: f64,
    /// Width of the heart-rate Gaussians, bpm.
    #[arg(long, default_value_t = 3.0)]
    sigma: f64,
    /// Also write the analytic gradient as CSV.
    #[arg(long)]
    grad_out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct HrArgs {
    #[arg(long)]
    bvp: PathBuf,
    #[arg(long, default_value_t = 0.67)]
    band_lo: f64,
    #[arg(long, default_value_t = 3.0)]
    band_hi: f64,
    /// Bandpass the waveform before the spectral estimate.
    #[arg(long, default_value_t = false)]
    filter: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Prediction/reference waveform pair as `pred.csv,gt.csv`; repeatable.
    #[arg(long = "pair", required = true)]
    pairs: Vec<String>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Bandpass predictions before estimating their rate.
    #[arg(long, default_value_t = false)]
    filter: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineMethod {
    Pos,
    Green,
}

#[derive(clap::Args)]
struct BaselineArgs {
    #[arg(long)]
    clip: PathBuf,
    #[arg(long, value_enum)]
    method: BaselineMethod,
    /// Region of interest as `x,y,w,h` pixels; whole frame when absent.
    #[arg(long)]
    roi: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "baseline")]
    name: String,
}

#[derive(clap::Args)]
struct AttnDumpArgs {
    #[arg(long, default_value = "default")]
    config: String,
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Block position in the schedule, zero-based.
    #[arg(long, default_value_t = 0)]
    stage: usize,
    /// Flat token index whose refined attention row is exported.
    #[arg(long, default_value_t = 0)]
    query: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SummaryArgs {
    #[arg(long, default_value = "default")]
    config: String,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth(a) => commands::synth(a),
        Cmd::Forward(a) => commands::forward(a),
        Cmd::Loss(a) => commands::loss(a),
        Cmd::Hr(a) => commands::hr(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::Baseline(a) => commands::baseline(a),
        Cmd::AttnDump(a) => commands::attn_dump(a),
        Cmd::Summary(a) => commands::summary(a),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        let diag = serde_json::json!({ "code": e.code, "message": e.message });
        eprintln!("{diag}");
        std::process::exit(1);
    }
}
