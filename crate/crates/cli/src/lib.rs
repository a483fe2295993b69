//! Batch entry points over the planning and execution library.

mod commands;
mod manifest;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    bench_plans, cmd_bench, cmd_plan, cmd_replay, cmd_run, cmd_validate, BenchOutput, RunOutput,
    ValidationReport,
};
pub use manifest::{parse_backend, parse_disturbance, Inputs, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "asmbt",
    version,
    about = "Plan, validate and execute behavior trees for assembly tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a plan bundle from a demonstration transcript.
    Plan(PlanArgs),
    /// Check a behavior-tree document for syntax and logical coherence.
    Validate(ValidateArgs),
    /// Plan and execute one scenario.
    Run(RunArgs),
    /// Run the task-length by disturbance matrix.
    Bench(BenchArgs),
    /// Render a trace document as a timeline.
    Replay(ReplayArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Json,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// Approve everything.
    #[default]
    Auto,
    /// Answer with corrective feedback derived from `--gold`.
    Scripted,
}

/// Document selection shared by plan and run.
#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// Run manifest; its paths are relative to the manifest file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Use the bundled fixtures of this task length (1, 3 or 5).
    #[arg(long)]
    pub task: Option<usize>,
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub setup: Option<PathBuf>,
    #[arg(long)]
    pub workcell: Option<PathBuf>,
    /// `fallback`, `mock` (bundled script of --task), `mock:PATH` or
    /// `shim:PROGRAM [ARGS...]`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Scripted faults applied to first backend replies.
    #[arg(long)]
    pub faults: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub gate: Option<GateKind>,
    /// Gold interpretation for the scripted gate.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub max_rounds: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the produced documents.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Behavior-tree document.
    pub tree: PathBuf,
    /// Setup whose initial state the tree is checked against.
    #[arg(long)]
    pub setup: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Bundled scenario of --task with this disturbance kind.
    #[arg(long)]
    pub disturbance: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Manifest supplying setup, workcell, backend, seed, output directory
    /// and execution settings.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    pub trials: usize,
    /// Master seed of the per-trial seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Task lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5])]
    pub lengths: Vec<usize>,
    /// Disturbance columns, comma separated (`none`, `I`, `II`, `III`).
    #[arg(long, value_delimiter = ',', default_values = ["none", "I", "II", "III"])]
    pub disturbances: Vec<String>,
    /// Perception noise level, a multiple of the reference noise model.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Also sweep these noise levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<f64>,
    /// `mock` (bundled scripts, the default) or `fallback`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Trace document.
    pub trace: PathBuf,
    /// Print the metrics document instead of the timeline.
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Persist plans and event logs per session here.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Wall-clock pause between ticks.
    #[arg(long, default_value_t = 100)]
    pub tick_delay_ms: u64,
    #[arg(long, default_value_t = 100_000)]
    pub event_capacity: usize,
}

/// Runs a parsed command, writing reports to stdout. Validation exits with
/// status 2 when the tree fails a check.
pub fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Plan(a) => commands::plan(a),
        Command::Validate(a) => commands::validate(a),
        Command::Run(a) => commands::run(a),
        Command::Bench(a) => commands::bench(a),
        Command::Replay(a) => commands::replay(a),
        Command::Serve(a) => commands::serve(a),
    }
}
