use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use goalshape_core::sim::Task;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "goalshape",
    version,
    about = "Goal-shape prediction for deformable tissue manipulation"
)]
pub struct Cli {
    /// Worker threads for independent jobs. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scripted demonstrations.
    GenData(GenDataArgs),
    /// Train a goal network on a dataset.
    Train(TrainArgs),
    /// Predict a goal cloud from a current and a context cloud.
    Predict(PredictArgs),
    /// Evaluate a model on a test dataset.
    Eval(EvalArgs),
    /// Run a dataset-size ablation end to end.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_chamfer: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_emd: f64,
    #[arg(long, default_value_t = 512)]
    pub n_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; the log and run.json go to its directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub current: PathBuf,
    #[arg(long)]
    pub context: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Chamfer between predicted and demonstrated goals.
    Goals,
    /// Closed-loop servoing toward predicted goals.
    Servo,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RetractionAblation,
    WrappingAblation,
}

impl Experiment {
    pub fn task(self) -> Task {
        match self {
            Experiment::RetractionAblation => Task::Retraction,
            Experiment::WrappingAblation => Task::Wrapping,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::RetractionAblation => "retraction-ablation",
            Experiment::WrappingAblation => "wrapping-ablation",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReproduceArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// Training-set sizes; the largest is generated and the others are
    /// random subsets of it.
    #[arg(long, value_delimiter = ',', default_value = "10,100")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub test_count: usize,
}
