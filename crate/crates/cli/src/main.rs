use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use riskroute_cli::config::{load_pipeline_config, BackendKind, PipelineConfig};
use riskroute_cli::pipeline::{
    run_ablate, run_pipeline, run_sweep, stage_build_cohort, stage_evaluate, stage_gen_synth,
    stage_preprocess, stage_route, stage_train, ArtifactPaths,
};
use riskroute_cli::report::{
    ablation_table, metrics_table, sweep_table, write_ablation_csv, write_sweep_csv,
};
use riskroute_cli::CliError;
use riskroute_core::ablate::AblationBundle;
use riskroute_core::icl::ReliableStrategy;

#[derive(Parser)]
#[command(
    name = "riskroute",
    version,
    about = "Confidence-routed hybrid risk prediction over synthetic health records"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw-patient dataset with its feature table, code maps, and rules
    GenSynth(GenSynthArgs),
    /// Label cases, match controls, and apply the prediction window
    BuildCohort(BuildCohortArgs),
    /// Fit normalization statistics and vectorize a cohort
    Preprocess(PreprocessArgs),
    /// Tune and fit the supervised ensemble on a sample table
    Train(TrainArgs),
    /// Route samples between the ensemble and the language-model path
    Route(RouteArgs),
    /// Score a routed predictions file
    Evaluate(EvaluateArgs),
    /// Routed evaluation across several confidence thresholds
    Sweep(SweepArgs),
    /// The ablation suite: prompt text, retrieval, pool denoising, threshold, strata
    Ablate(AblateArgs),
    /// Every stage in order: gen-synth, build-cohort, preprocess, train, route, evaluate
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Pipeline config TOML; only [paths] and [synth] matter here
    #[arg(long)]
    config: Option<PathBuf>,
    /// Raw patients JSONL; feature table, maps, and rules land beside it
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildCohortArgs {
    /// Raw patients JSONL
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Case-definition rules TOML
    #[arg(long)]
    rules: PathBuf,
    /// Cohort members output JSONL
    #[arg(long)]
    out: PathBuf,
    /// Minimum qualifying diagnosis encounters for a case: 1 or 2
    #[arg(long)]
    cp: Option<u32>,
    /// Prediction window in years: 0, 1, or 3
    #[arg(long)]
    pw: Option<u32>,
    /// Controls matched per case
    #[arg(long)]
    ratio: Option<u32>,
    /// Code-map directory; defaults to maps/ beside the input
    #[arg(long)]
    maps: Option<PathBuf>,
    /// Pipeline config TOML supplying any value not overridden above
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Cohort members JSONL
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Normalization statistics output JSON
    #[arg(long)]
    stats: PathBuf,
    /// Vectorized samples output JSONL
    #[arg(long)]
    out: PathBuf,
    /// Continuous feature table CSV; defaults to features.csv beside the input
    #[arg(long)]
    features: Option<PathBuf>,
    /// Code-map directory; defaults to maps/ beside the input
    #[arg(long)]
    maps: Option<PathBuf>,
    /// Pipeline config TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Hyperparameter grid TOML
    #[arg(long)]
    grid: PathBuf,
    /// Preprocessed samples JSONL; the whole file is the training set
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Model bundle output JSON
    #[arg(long)]
    out: PathBuf,
    /// Statistics JSON from preprocess; defaults to stats.json beside the input
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Fit seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Pipeline config TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RouteArgs {
    /// Trained model bundle JSON
    #[arg(long)]
    model: PathBuf,
    /// Demonstration pool JSON: read as input, or written when --pool-from builds it
    #[arg(long)]
    reliable: PathBuf,
    /// Samples to route, JSONL
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Routed predictions output JSONL
    #[arg(long)]
    out: PathBuf,
    /// Confidence threshold for the supervised path
    #[arg(long)]
    sigma: Option<f64>,
    /// Language-model backend
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Build the pool from this training-sample JSONL instead of reading --reliable
    #[arg(long)]
    pool_from: Option<PathBuf>,
    /// Pool confidence threshold (high-confidence strategy)
    #[arg(long)]
    tau: Option<f64>,
    /// Pool denoising strategy
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Demonstrations per prompt
    #[arg(long)]
    k_demos: Option<usize>,
    /// Blend between continuous and categorical distance in retrieval
    #[arg(long)]
    lambda: Option<f64>,
    /// Backend response cache JSON, loaded before routing and saved after
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Directory holding summary.txt and icl_header.txt prompt templates
    #[arg(long)]
    templates: Option<PathBuf>,
    /// HTTP backend endpoint
    #[arg(long)]
    url: Option<String>,
    /// HTTP bearer token
    #[arg(long)]
    token: Option<String>,
    /// Pipeline config TOML supplying any value not overridden above
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Routed predictions JSONL
    #[arg(long)]
    pred: PathBuf,
    /// Metrics report output JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Pipeline config TOML naming the artifact directory
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated thresholds, e.g. 0.5,0.6,0.7; defaults to [report].sigmas
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// Also write the table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Pipeline config TOML naming the artifact directory
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parts to report: all, or a comma-separated subset of
    /// summary,retrieval,denoising,sweep,strata
    #[arg(long, default_value = "all", value_delimiter = ',')]
    suite: Vec<String>,
    /// Also write the rows as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

impl From<BackendArg> for BackendKind {
    fn from(v: BackendArg) -> Self {
        match v {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Http => BackendKind::Http,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Full,
    AllCorrect,
    AnyCorrect,
    HighConfidence,
}

impl From<StrategyArg> for ReliableStrategy {
    fn from(v: StrategyArg) -> Self {
        match v {
            StrategyArg::Full => ReliableStrategy::Full,
            StrategyArg::AllCorrect => ReliableStrategy::AllCorrect,
            StrategyArg::AnyCorrect => ReliableStrategy::AnyCorrect,
            StrategyArg::HighConfidence => ReliableStrategy::HighConfidence,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print to stdout and succeed; usage errors
            // print to stderr and count as validation failures.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynth(args) => cmd_gen_synth(args),
        Command::BuildCohort(args) => cmd_build_cohort(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Train(args) => cmd_train(args),
        Command::Route(args) => cmd_route(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => {
            let (config, warnings) = load_pipeline_config(p)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok(config)
        }
        None => Ok(PipelineConfig::default()),
    }
}

/// Flag overrides can push a loaded (or default) config back out of range.
fn revalidate(config: &PipelineConfig) -> Result<(), CliError> {
    for w in config.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(())
}

/// Directory of a file argument; bare filenames count as the working
/// directory. Stage manifests land here.
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn cmd_gen_synth(args: GenSynthArgs) -> Result<(), CliError> {
    let config = load_config(args.config.as_deref())?;
    let mut paths = ArtifactPaths::new(&config.paths.out_dir);
    if let Some(out) = &args.out {
        paths = ArtifactPaths::new(&parent_dir(out));
        paths.raw_patients = out.clone();
    }
    stage_gen_synth(&config, &paths)?;
    println!("wrote {}", paths.raw_patients.display());
    Ok(())
}

fn cmd_build_cohort(args: BuildCohortArgs) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(v) = args.cp {
        config.cohort.cp = v;
    }
    if let Some(v) = args.pw {
        config.cohort.pw_years = v;
    }
    if let Some(v) = args.ratio {
        config.cohort.ratio = v;
    }
    revalidate(&config)?;

    let mut paths = ArtifactPaths::new(&parent_dir(&args.out));
    paths.maps_dir = args.maps.unwrap_or_else(|| parent_dir(&args.input).join("maps"));
    paths.raw_patients = args.input;
    paths.rules = args.rules;
    paths.cohort = args.out;
    stage_build_cohort(&config, &paths)?;
    println!("wrote {}", paths.cohort.display());
    Ok(())
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), CliError> {
    let config = load_config(args.config.as_deref())?;
    let mut paths = ArtifactPaths::new(&parent_dir(&args.out));
    paths.features =
        args.features.unwrap_or_else(|| parent_dir(&args.input).join("features.csv"));
    paths.maps_dir = args.maps.unwrap_or_else(|| parent_dir(&args.input).join("maps"));
    paths.cohort = args.input;
    paths.stats = args.stats;
    paths.samples = args.out;
    stage_preprocess(&config, &paths)?;
    println!("wrote {}", paths.samples.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    config.paths.grids = args.grid;
    if let Some(seed) = args.seed {
        config.fit.seed = seed;
    }
    revalidate(&config)?;

    let mut paths = ArtifactPaths::new(&parent_dir(&args.out));
    paths.stats = args.stats.unwrap_or_else(|| parent_dir(&args.input).join("stats.json"));
    paths.samples = args.input;
    paths.model = args.out;
    stage_train(&config, &paths, false)?;
    println!("wrote {}", paths.model.display());
    Ok(())
}

fn cmd_route(args: RouteArgs) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(v) = args.sigma {
        config.route.sigma = v;
    }
    if let Some(v) = args.tau {
        config.route.tau = v;
    }
    if let Some(v) = args.k_demos {
        config.route.k_demos = v;
    }
    if let Some(v) = args.lambda {
        config.route.lambda = v;
    }
    if let Some(v) = args.strategy {
        config.route.strategy = v.into();
    }
    if let Some(v) = args.backend {
        config.backend.kind = v.into();
    }
    if let Some(v) = args.url {
        config.backend.url = v;
    }
    if args.token.is_some() {
        config.backend.token = args.token;
    }
    if args.cache.is_some() {
        config.paths.cache = args.cache;
    }
    if args.templates.is_some() {
        config.paths.templates = args.templates;
    }
    revalidate(&config)?;

    let mut paths = ArtifactPaths::new(&parent_dir(&args.out));
    paths.model = args.model;
    paths.test = args.input;
    paths.reliable = args.reliable;
    paths.predictions = args.out;
    let build_pool = args.pool_from.is_some();
    if let Some(train) = args.pool_from {
        paths.train = train;
    }
    stage_route(&config, &paths, build_pool)?;
    println!("wrote {}", paths.predictions.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let config = PipelineConfig::default();
    let mut paths = ArtifactPaths::new(&parent_dir(&args.out));
    paths.predictions = args.pred;
    paths.metrics = args.out;
    let report = stage_evaluate(&config, &paths)?;
    print!("{}", metrics_table(&report));
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let config = load_config(args.config.as_deref())?;
    let rows = run_sweep(&config, args.sigmas.as_deref())?;
    print!("{}", sweep_table(&rows));
    if let Some(path) = &args.csv {
        write_sweep_csv(path, &rows)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let config = load_config(args.config.as_deref())?;
    // The five parts share each repeat's split, fit, and cache, so running
    // them all and trimming the report costs nearly nothing extra.
    let bundle = filter_bundle(run_ablate(&config)?, &args.suite)?;
    print!("{}", ablation_table(&bundle));
    if let Some(path) = &args.csv {
        write_ablation_csv(path, &bundle)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn filter_bundle(mut bundle: AblationBundle, suite: &[String]) -> Result<AblationBundle, CliError> {
    if suite.iter().any(|s| s == "all") {
        return Ok(bundle);
    }
    let mut keep = [false; 5];
    for part in suite {
        match part.as_str() {
            "summary" => keep[0] = true,
            "retrieval" => keep[1] = true,
            "denoising" => keep[2] = true,
            "sweep" => keep[3] = true,
            "strata" => keep[4] = true,
            other => {
                return Err(CliError::validation(format!(
                    "unknown suite part {other:?}; use all or a subset of \
                     summary,retrieval,denoising,sweep,strata"
                )));
            }
        }
    }
    if !keep[0] {
        bundle.summary_vs_concat.clear();
    }
    if !keep[1] {
        bundle.retrieval.clear();
    }
    if !keep[2] {
        bundle.denoising.clear();
    }
    if !keep[3] {
        bundle.sweep.clear();
    }
    if !keep[4] {
        bundle.strata.clear();
    }
    Ok(bundle)
}

fn cmd_pipeline(args: PipelineArgs) -> Result<(), CliError> {
    let config = load_config(args.config.as_deref())?;
    let report = run_pipeline(&config)?;
    print!("{}", metrics_table(&report));
    Ok(())
}
