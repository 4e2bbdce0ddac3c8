use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "diagent", version, about = "Run, ablate and diagnose a tool-routed visual reasoning agent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Log model request/response bodies to stderr (images redacted).
    #[arg(long, global = true)]
    pub debug_wire: bool,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the agent over a dataset and write one record per item and seed.
    Run(RunArgs),
    /// Run the ablation grid and write the accuracy table.
    Ablate(AblateArgs),
    /// Compute diagnostics from run logs.
    Analyze(AnalyzeArgs),
    /// Render an analysis or ablation file as JSON, CSV or SVG.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Dataset JSONL file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated seeds; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Worker threads; defaults to the config's.
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output JSONL of run records.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// TOML file with `[[ablation]]` entries; defaults to the config's grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Output JSON with the table; records go to `<out>.<n>.jsonl` per condition.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierKind {
    RuleBased,
    ModelJudge,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run-record JSONL files.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long, default_value_t = diagent_core::diagnostics::DEFAULT_BUCKET_WIDTH)]
    pub bucket_width: u64,
    #[arg(long, value_enum, default_value_t = ClassifierKind::RuleBased)]
    pub classifier: ClassifierKind,
    /// Run config whose model acts as judge (with `--classifier model-judge`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output of `analyze` or `ablate`.
    pub analysis: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Output directory; required for CSV and SVG. JSON goes to standard
    /// output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
