//! `vtla`: data generation, training, evaluation and serving for the
//! visuotactile insertion benchmark.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "vtla", version, about = "Visuotactile peg-in-hole benchmark and policy training")]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads; 0 uses every logical core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Base seed for every derived random stream.
    #[arg(long, global = true, env = "VTLA_SEED", default_value_t = 0)]
    seed: u64,

    /// Log progress to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate episodes and write an instruction-format dataset.
    GenData(GenDataArgs),
    /// Train a policy on the in-distribution split with next-token loss.
    SftTrain(SftArgs),
    /// Sample candidate actions and build chosen/rejected pairs.
    BuildPrefs(BuildPrefsArgs),
    /// Refine a policy on preference pairs.
    DpoTrain(DpoArgs),
    /// Goal convergence rate and per-axis L1 on a dataset.
    EvalDataset(EvalDatasetArgs),
    /// Insertion success rate and attempt steps in simulation.
    EvalInsert(EvalInsertArgs),
    /// Serve a checkpoint over the line-delimited JSON protocol.
    ServePolicy(ServeArgs),
    /// Render metric files as a table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PresetArg {
    Full,
    Eval,
    Desk,
}

#[derive(Args, Debug, Serialize)]
struct GenDataArgs {
    /// Output directory; must be absent or empty.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    /// Total sample count, spread evenly over the shapes.
    #[arg(long)]
    count: Option<usize>,
    /// Comma-separated subset of square,triangle,hexagon,pentagon,round.
    #[arg(long, value_delimiter = ',')]
    shapes: Option<Vec<String>>,
    /// Fixed clearance in mm instead of sampling from [0.6, 2.0].
    #[arg(long)]
    clearance: Option<f64>,
    /// Seed salt; datasets with different salts never share episodes.
    #[arg(long)]
    salt: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum Schedule {
    /// Tuned for the tiny policy at desk scale.
    Desk,
    /// The published hyperparameters.
    Original,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum OrderArg {
    VisionLast,
    VisionFirst,
}

#[derive(Args, Debug, Serialize)]
struct SftArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    schedule: Schedule,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    embed: usize,
    #[arg(long, value_enum, default_value = "vision-last")]
    feature_order: OrderArg,
    /// Skip input standardization.
    #[arg(long)]
    no_norm: bool,
    /// Train on at most this many in-distribution samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Write the per-epoch loss curve as PNG.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PrefPreset {
    /// 1,000 pairs.
    #[value(name = "dpo-1k")]
    #[serde(rename = "dpo-1k")]
    Dpo1k,
    /// 2,400 pairs.
    #[value(name = "dpo-2k")]
    #[serde(rename = "dpo-2k")]
    Dpo2k,
}

#[derive(Args, Debug, Serialize)]
struct BuildPrefsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Policy that generates the candidates.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Preference JSONL to write.
    #[arg(long)]
    out: PathBuf,
    /// Exact number of pairs to emit; fails if the data cannot supply them.
    #[arg(long, conflicts_with = "preset")]
    pairs: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<PrefPreset>,
    /// Use at most this many in-distribution samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Candidates drawn per generation config and sample.
    #[arg(long, default_value_t = 1)]
    per_config: usize,
}

#[derive(Args, Debug, Serialize)]
struct DpoArgs {
    /// Starting policy; also the frozen reference.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prefs: PathBuf,
    /// Dataset the preference pairs were built from.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    schedule: Schedule,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Train on the first N pairs only.
    #[arg(long)]
    pairs: Option<usize>,
    /// Write the per-epoch loss and accuracy curves as PNG.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SplitArg {
    All,
    Id,
    Ood,
}

#[derive(Args, Debug, Serialize)]
struct EvalDatasetArgs {
    /// Dataset directory or manifest file.
    #[arg(long, alias = "manifest")]
    data: PathBuf,
    /// checkpoint:FILE or random.
    #[arg(long, required_unless_present = "checkpoint")]
    policy: Option<String>,
    /// Shorthand for --policy checkpoint:FILE.
    #[arg(long, conflicts_with = "policy")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    /// Row label in reports; defaults to the policy spec.
    #[arg(long)]
    method: Option<String>,
    /// Metrics JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GridArg {
    Square,
    Shapes,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StepsArg {
    SuccessOnly,
    AllEpisodes,
}

#[derive(Args, Debug, Serialize)]
struct EvalInsertArgs {
    /// oracle, random, zero, checkpoint:FILE or remote:HOST:PORT.
    #[arg(long)]
    policy: String,
    #[arg(long, value_enum, default_value = "square")]
    grid: GridArg,
    /// Restrict to one shape.
    #[arg(long)]
    shape: Option<String>,
    /// Restrict to one clearance in mm.
    #[arg(long)]
    clearance: Option<f64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, value_enum, default_value = "success-only")]
    steps: StepsArg,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Address to bind; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:7070")]
    listen: String,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FormatArg {
    Text,
    Markdown,
    Csv,
    Json,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    /// Metric files written by eval-dataset or eval-insert, all of one kind.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // help and version exit 0, usage errors exit 2
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
