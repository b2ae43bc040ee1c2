use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use zeta_core::infer::AggregationMode;

#[derive(Debug, Parser)]
#[command(
    name = "zeta",
    version,
    about = "Interpretable zero-shot ECG diagnosis: knowledge base curation, scoring and evaluation",
    propagate_version = true
)]
pub struct Cli {
    /// JSON config file; ZETA_* variables override its values, flags override both
    #[arg(
        long,
        global = true,
        env = "ZETA_CONFIG",
        hide_env_values = true,
        value_name = "FILE"
    )]
    pub config: Option<PathBuf>,

    /// Print the resolved config as JSON and exit
    #[arg(long, global = true)]
    pub dump_config: bool,

    /// Seed for every random choice [default: 42]
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Worker threads for data-parallel scoring [default: available cores]
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ask every model for observations of every condition and build a candidate pool
    Generate(GenerateArgs),
    /// Merge candidate pools into one dataset-specific or cross-dataset pool
    Preprocess(PreprocessArgs),
    /// Expert review of candidate observations
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Knowledge base export
    #[command(subcommand)]
    Kb(KbCommand),
    /// Embed every observation text of a knowledge base into a store
    EmbedTexts(EmbedTextsArgs),
    /// Embed ECG recordings into a store
    EmbedEcgs(EmbedEcgsArgs),
    /// Score ECG embeddings against a knowledge base
    Score(ScoreArgs),
    /// Per-class ROC AUC and confusion metrics of a score table
    Evaluate(EvaluateArgs),
    /// Score every labeled sample and evaluate in one step
    Benchmark(BenchmarkArgs),
    /// Blinded reader study
    #[command(subcommand)]
    Study(StudyCommand),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON list of {code, display_name} conditions
    #[arg(long, value_name = "FILE")]
    pub conditions: Option<PathBuf>,
    /// JSON list of model configs; tokens are read from each model's token_env
    #[arg(long, value_name = "FILE")]
    pub models: Option<PathBuf>,
    /// Replay canned replies from DIR/{model}/{CODE}.txt instead of calling models
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
    /// Dataset the pool is built for
    #[arg(long, default_value = "default", value_name = "ID")]
    pub dataset: String,
    /// Append every raw reply to this JSONL archive
    #[arg(long, value_name = "FILE")]
    pub archive: Option<PathBuf>,
    /// Models queried at once
    #[arg(long, default_value_t = 3, value_name = "N")]
    pub concurrency: usize,
    /// Per-request timeout in seconds
    #[arg(long, default_value_t = 60, value_name = "SECS")]
    pub timeout: u64,
    /// Attempts per model on rate limits, server errors and timeouts
    #[arg(long, default_value_t = 5, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    pub max_attempts: u32,
    /// Output candidate pool
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolMode {
    Dscp,
    Cdcp,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Comma-separated candidate pools to merge
    #[arg(long, required = true, value_delimiter = ',', value_name = "FILES")]
    pub pools: Vec<PathBuf>,
    /// Pool kind to build
    #[arg(long, value_enum, value_name = "MODE")]
    pub mode: PoolMode,
    /// Dataset id of a dscp pool
    #[arg(long, value_name = "ID", required_if_eq("mode", "dscp"))]
    pub dataset: Option<String>,
    /// JSON map from dataset labels to canonical {code, display_name}
    #[arg(long, value_name = "FILE")]
    pub alias: Option<PathBuf>,
    /// Output candidate pool
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Serve the review, scoring and study API
    Serve(ServeArgs),
    /// Apply a review log to a pool offline
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Candidate pool before review
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Port to listen on
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Address to bind
    #[arg(long, default_value = "127.0.0.1", value_name = "ADDR")]
    pub host: String,
    /// Directory for the review log and study sessions
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Knowledge base written by export and used for scoring
    #[arg(long, value_name = "FILE")]
    pub kb: Option<PathBuf>,
    /// Encoder config enabling the score endpoint
    #[arg(long, value_name = "FILE")]
    pub provider: Option<PathBuf>,
    /// Serve the workbench build from this directory
    #[arg(long, value_name = "DIR")]
    pub static_dir: Option<PathBuf>,
    /// Base URL of waveform images shown on study cards
    #[arg(long, value_name = "URL")]
    pub waveform_base_url: Option<String>,
    /// Environment variable holding the API bearer token
    #[arg(long, value_name = "VAR")]
    pub token_env: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Candidate pool before review
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Review log (JSONL)
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Output reviewed pool
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Export the reviewed knowledge base
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Candidate pool
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Review log applied to the pool first
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Keep unreviewed candidates too (rejected ones are always dropped)
    #[arg(long)]
    pub include_unreviewed: bool,
    /// With --include-unreviewed, keep at most N observations per polarity
    #[arg(long, value_name = "N", requires = "include_unreviewed")]
    pub limit: Option<usize>,
    /// Output knowledge base
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedTextsArgs {
    /// Knowledge base whose observation texts are embedded
    #[arg(long, value_name = "FILE")]
    pub kb: Option<PathBuf>,
    /// Encoder config
    #[arg(long, value_name = "FILE")]
    pub provider: Option<PathBuf>,
    /// Output store (.zeb binary, .jsonl text)
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedEcgsArgs {
    /// Labels CSV whose sample ids are embedded
    #[arg(long, value_name = "FILE", conflicts_with = "ids")]
    pub labels: Option<PathBuf>,
    /// File with one ECG id per line
    #[arg(long, value_name = "FILE")]
    pub ids: Option<PathBuf>,
    /// Encoder config
    #[arg(long, value_name = "FILE")]
    pub provider: Option<PathBuf>,
    /// Knowledge base for planted synthetic embeddings
    #[arg(long, value_name = "FILE")]
    pub kb: Option<PathBuf>,
    /// Output store (.zeb binary, .jsonl text)
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Logistic of the gap between mean positive and mean negative similarity
    Pooled,
    /// Mean over positive/negative pairs generated together
    Paired,
}

impl From<ModeArg> for AggregationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pooled => AggregationMode::Pooled,
            ModeArg::Paired => AggregationMode::Paired,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    /// How observation similarities are combined
    #[arg(long, value_enum, value_name = "MODE")]
    pub mode: Option<ModeArg>,
    /// Temperature of the logistic [default: 0.5]
    #[arg(long, value_name = "T")]
    pub tau: Option<f64>,
    /// A condition is predicted when its possibility exceeds this [default: 0.5]
    #[arg(long, value_name = "P")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// ECG embedding store
    #[arg(long, value_name = "FILE")]
    pub ecg_store: Option<PathBuf>,
    /// Observation text embedding store
    #[arg(long, value_name = "FILE")]
    pub text_store: Option<PathBuf>,
    /// Knowledge base
    #[arg(long, value_name = "FILE")]
    pub kb: Option<PathBuf>,
    /// Score only the ids listed in this file (one per line)
    #[arg(long, value_name = "FILE")]
    pub ids: Option<PathBuf>,
    /// Use text vectors as stored instead of normalizing them
    #[arg(long)]
    pub no_text_norm: bool,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Output score table (JSONL)
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Labels CSV with columns sample_id,labels
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// Label alias map onto canonical condition codes
    #[arg(long, value_name = "FILE")]
    pub alias: Option<PathBuf>,
    /// Fail on labels missing from the alias map
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Score table (JSONL)
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// Also compute confusion metrics at this threshold
    #[arg(long, value_name = "P")]
    pub threshold: Option<f64>,
    /// Method name in the printed table
    #[arg(long, default_value = "ZETA", value_name = "NAME")]
    pub method: String,
    /// Output report (JSON)
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub labels: LabelArgs,
    /// Knowledge base
    #[arg(long, value_name = "FILE")]
    pub kb: Option<PathBuf>,
    /// Encoder config
    #[arg(long, value_name = "FILE")]
    pub provider: Option<PathBuf>,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Also compute confusion metrics at the threshold
    #[arg(long)]
    pub confusion: bool,
    /// Dataset id recorded in the report
    #[arg(long, value_name = "ID")]
    pub dataset: Option<String>,
    /// Method name in the printed table
    #[arg(long, default_value = "ZETA", value_name = "NAME")]
    pub method: String,
    /// Also write the score table (JSONL)
    #[arg(long, value_name = "FILE")]
    pub scores_out: Option<PathBuf>,
    /// Output report (JSON)
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    /// Draw high and low scoring samples per condition into a shuffled session
    Plan(PlanArgs),
    /// Metrics of a session from its answer log
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Score table (JSONL)
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// Comma-separated conditions [default: every labeled condition]
    #[arg(long, value_delimiter = ',', value_name = "CODES")]
    pub conditions: Vec<String>,
    /// Samples per arm and condition
    #[arg(long, default_value_t = 3, value_name = "K")]
    pub k: usize,
    /// Threshold the model's own prediction is judged at [default: 0.5]
    #[arg(long, value_name = "P")]
    pub threshold: Option<f64>,
    /// Session id
    #[arg(long, default_value = "study", value_name = "ID")]
    pub session_id: String,
    /// Output session (JSON)
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Session file
    #[arg(long, value_name = "FILE")]
    pub session: PathBuf,
    /// Answer log (JSONL); missing means no answers yet
    #[arg(long, value_name = "FILE")]
    pub answers: PathBuf,
    /// Output report (JSON)
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}
