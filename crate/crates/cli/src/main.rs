use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "boundnet",
    version,
    about = "Bounded-treewidth Bayesian networks: learning, inference and imputation"
)]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    /// Token marking a missing cell in CSV input and output.
    #[arg(long, global = true, default_value = "?")]
    missing_token: String,

    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a parent-set cache from a CSV dataset.
    Parentsets(ParentsetsArgs),
    /// Learn a bounded-treewidth network with k-MAX or k-greedy.
    Learn(LearnArgs),
    /// Score a network's structure on a dataset.
    Score(ScoreArgs),
    /// Answer a marginal, evidence-probability or MPE query.
    Infer(InferArgs),
    /// Draw a dataset from a network.
    Sample(SampleArgs),
    /// Generate a random network of bounded treewidth.
    GenNet(GenNetArgs),
    /// Blank out cells completely at random.
    InjectMissing(InjectArgs),
    /// Impute missing values with structural EM.
    SemImpute(SemArgs),
    /// Compare learners on several datasets.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct CacheOpts {
    /// Treewidth bound; parent sets have at most this many members.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Cache time budget in seconds (default: one second per variable).
    #[arg(long)]
    pub cache_time: Option<f64>,
    /// Maximum best-first expansions per variable.
    #[arg(long)]
    pub max_explored: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args)]
pub struct ParentsetsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub cache: CacheOpts,
    /// Cache file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct LearnArgs {
    /// Training data; used to build the cache (unless `--cache-file` is given)
    /// and to estimate parameters.
    #[arg(long)]
    pub data: PathBuf,
    /// Precomputed parent-set cache.
    #[arg(long)]
    pub cache_file: Option<PathBuf>,
    #[command(flatten)]
    pub cache: CacheOpts,
    /// Search time budget in seconds.
    #[arg(long)]
    pub time: Option<f64>,
    /// Maximum number of restarts.
    #[arg(long)]
    pub max_iter: Option<u64>,
    #[arg(long, default_value = "kmax")]
    pub algo: String,
    /// Parameter smoothing.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Network file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TSV with one score per completed iteration.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub net: PathBuf,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Observed values as `NAME=STATE,...`.
    #[arg(long, default_value = "")]
    pub evidence: String,
    /// Variable whose posterior marginal to print.
    #[arg(long, conflicts_with_all = ["prob", "mpe"])]
    pub target: Option<String>,
    /// Print the probability of the evidence.
    #[arg(long, conflicts_with = "mpe")]
    pub prob: bool,
    /// Print the most probable completion.
    #[arg(long)]
    pub mpe: bool,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GenNetArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub max_arity: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InjectArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Probability that each observed cell is blanked.
    #[arg(long)]
    pub rate: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// TSV listing every blanked cell and its original state.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SemArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    /// Time multiplier: n·t seconds for the cache, n·t/10 for the search.
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// `joint` (one MPE query per row) or `independent` (per-cell marginals).
    #[arg(long, default_value = "joint")]
    pub mode: String,
    #[arg(long, default_value_t = 20)]
    pub max_sem_iter: usize,
    #[arg(long)]
    pub max_explored: Option<usize>,
    #[arg(long)]
    pub max_learn_iter: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Imputed dataset to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Final network to write.
    #[arg(long)]
    pub net_out: Option<PathBuf>,
    /// Complete version of `--data`; when given, imputation accuracy is
    /// reported against it alongside the mode-imputation baseline.
    #[arg(long)]
    pub original: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Datasets to compare on (repeatable).
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Treewidth bounds (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub k: Vec<usize>,
    /// Algorithms (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "kmax,kgreedy")]
    pub algos: Vec<String>,
    /// Search seconds per run.
    #[arg(long, default_value_t = 10.0)]
    pub time: f64,
    #[arg(long)]
    pub max_iter: Option<u64>,
    /// Cache seconds per dataset and k.
    #[arg(long, default_value_t = 10.0)]
    pub cache_time: f64,
    #[arg(long)]
    pub max_explored: Option<usize>,
    /// Seeds (comma separated); defaults to the global `--seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Prefix for `<prefix>runs.tsv`, `<prefix>pairs.tsv` and `<prefix>long.tsv`.
    #[arg(long)]
    pub out_prefix: Option<String>,
}

fn exit_code(class: &str) -> u8 {
    match class {
        "io" => 3,
        "input" => 4,
        "argument" => 5,
        "data" => 6,
        "structure" => 7,
        "budget" => 8,
        "inference" => 9,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    let ctx = commands::Context {
        missing_token: cli.missing_token.clone(),
        seed: cli.seed,
    };
    let result = match &cli.command {
        Command::Parentsets(a) => commands::parentsets(a, &ctx),
        Command::Learn(a) => commands::learn(a, &ctx),
        Command::Score(a) => commands::score(a, &ctx),
        Command::Infer(a) => commands::infer(a),
        Command::Sample(a) => commands::sample(a, &ctx),
        Command::GenNet(a) => commands::gen_net(a, &ctx),
        Command::InjectMissing(a) => commands::inject_missing(a, &ctx),
        Command::SemImpute(a) => commands::sem_impute(a, &ctx),
        Command::Bench(a) => commands::bench(a, &ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.class());
            ExitCode::from(exit_code(e.class()))
        }
    }
}
