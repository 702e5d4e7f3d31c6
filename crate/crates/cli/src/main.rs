//! `cbns`: prepare point-cloud datasets, train censors, release censored
//! data and measure the privacy-utility trade-off.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use cbns_core::PipelineKind;
use clap::{Args, Parser, Subcommand};

use commands::Failure;

#[derive(Parser)]
#[command(name = "cbns", version, about = "Censor sensitive attributes out of point clouds by noisy sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset directory from ModelNet meshes or the synthetic generator.
    PrepareData(PrepareDataArgs),
    /// Train a censor against proxy user and attacker classifiers.
    Train(TrainArgs),
    /// Release a censored copy of a dataset.
    Censor(CensorArgs),
    /// Offline attack: fine-tune a sensitive classifier on censored data.
    Attack(AttackArgs),
    /// Pareto front and hypervolume of trade-off points.
    Evaluate(EvaluateArgs),
    /// Train and evaluate a grid of pipelines over several seeds.
    Sweep(SweepArgs),
    /// Overlap of task and sensitive critical points on raw data.
    Premise(PremiseArgs),
}

#[derive(Args)]
struct PrepareDataArgs {
    #[command(subcommand)]
    source: Source,
}

#[derive(Subcommand)]
enum Source {
    /// Synthetic clouds with separate task, sensitive and overlap regions.
    Synth(SynthArgs),
    /// Four ModelNet classes laid out as <root>/<class>/{train,test}/*.off.
    Modelnet(ModelnetArgs),
}

#[derive(Args)]
struct OutputArgs {
    /// Points per cloud.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Fraction of points in the region shared by both attributes.
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    #[arg(long = "classes-t", default_value_t = 4)]
    classes_t: usize,
    #[arg(long = "classes-s", default_value_t = 4)]
    classes_s: usize,
    #[arg(long, default_value_t = 50)]
    samples_per_pair: usize,
    /// Coordinate jitter before normalization.
    #[arg(long, default_value_t = 0.01)]
    noise_floor: f64,
    /// Fraction of each class pair assigned to the train split.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ModelnetArgs {
    #[arg(long)]
    root: PathBuf,
    /// Two living then two non-living class names.
    #[arg(long, value_delimiter = ',', default_values_t = cbns_core::data::DEFAULT_CLASSES.map(String::from))]
    classes: Vec<String>,
    #[command(flatten)]
    output: OutputArgs,
}

/// Training config: a JSON file of `TrainConfig` keys plus flag overrides.
#[derive(Args)]
struct ConfigArgs {
    /// JSON object with any subset of the training keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Noise scale of the fixed-noise pipelines.
    #[arg(long)]
    sigma: Option<f64>,
    /// Points kept per cloud.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoint, history and manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<PipelineKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CensorArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory; must differ from --data.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct BudgetArgs {
    /// Attacker steps on raw training data.
    #[arg(long, default_value_t = 1000)]
    pretrain_steps: usize,
    /// Attacker steps on censored training data.
    #[arg(long, default_value_t = 1000)]
    finetune_steps: usize,
    /// Fresh user steps on censored training data.
    #[arg(long, default_value_t = 1000)]
    utility_steps: usize,
    #[arg(long, default_value_t = 32)]
    eval_batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    eval_lr: f64,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Output directory for privacy.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// CSV of trade-off points.
    #[arg(long, conflicts_with_all = ["checkpoint", "data"], required_unless_present = "checkpoint")]
    points: Option<PathBuf>,
    /// Trained runs to measure; repeatable.
    #[arg(long, requires = "data")]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Also write tradeoff.svg.
    #[arg(long)]
    plot: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Sweep directory; finished cells under cells/ are reused on rerun.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "CBNS,AS-AN,OS-AN,NO-PRIVACY")]
    kinds: Vec<PipelineKind>,
    #[arg(long, value_delimiter = ',', default_values_t = cbns_core::training::LAMBDA_GRID)]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = cbns_core::training::SIGMA_GRID)]
    sigmas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    budget: BudgetArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct PremiseArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training steps of each classifier.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for premise.json.
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<PipelineKind, String> {
    s.parse().map_err(|e: cbns_core::Error| e.to_string())
}

/// Applies CBNS_NUM_THREADS to rayon and to the tensor kernels.
fn cap_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("CBNS_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("CBNS_NUM_THREADS must be a positive integer, got {value:?}")))?;
    std::env::set_var("RAYON_NUM_THREADS", n.to_string());
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Failed(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    cap_threads()?;
    match cli.command {
        Command::PrepareData(a) => match a.source {
            Source::Synth(s) => commands::prepare_synth(&s),
            Source::Modelnet(m) => commands::prepare_modelnet(&m),
        },
        Command::Train(a) => commands::train(&a),
        Command::Censor(a) => commands::censor(&a),
        Command::Attack(a) => commands::attack(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Premise(a) => commands::premise(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
