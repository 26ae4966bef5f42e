//! `eventlens`: synthesize corpora, mine events, score, evaluate, fuse and
//! analyze from the command line.

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use eventlens::scorers::PopularityMode;
use eventlens::synthgen::SynthConfig;

use crate::config::{Resolved, RunConfig};

#[derive(Parser)]
#[command(name = "eventlens", version, about = "Event mining and participation prediction on check-in data")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted events.
    Synth(SynthArgs),
    /// Mine events and write events.jsonl.
    Detect(CommonArgs),
    /// Write per-user, per-event feature scores to scores.csv.
    Score(ScoreArgs),
    /// Cross-validate single features against a random baseline.
    Evaluate(ScoreArgs),
    /// Train and cross-validate fused ranking models.
    Fuse(FuseArgs),
    /// Correlate per-event niche scores with random-walk accuracy.
    Analyze(CommonArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator settings, TOML or JSON (by extension).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Directory holding checkins.csv, venues.csv and social.csv.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    checkins: Option<PathBuf>,
    #[arg(long)]
    venues: Option<PathBuf>,
    #[arg(long)]
    social: Option<PathBuf>,
    /// Events from a previous `detect`; mined on the fly when absent.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Minutes east of UTC used for day and hour bucketing.
    #[arg(long, allow_hyphen_values = true)]
    tz_offset: Option<i32>,
    #[arg(long)]
    top: Option<usize>,
    /// Scope radius in metres.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    ndcg_n: Option<usize>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rwr_k: Option<usize>,
    #[arg(long, value_parser = parse_popularity_mode)]
    popularity_mode: Option<PopularityMode>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated features (default: all six).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
}

#[derive(Args)]
struct FuseArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// ridge or m5.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, overrides_with = "no_rwr")]
    with_rwr: bool,
    #[arg(long, overrides_with = "with_rwr")]
    no_rwr: bool,
    /// Train LR, M5, LR+RWR and M5+RWR.
    #[arg(long)]
    all_variants: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
}

fn parse_popularity_mode(s: &str) -> Result<PopularityMode, String> {
    match s {
        "checkins" => Ok(PopularityMode::Checkins),
        "attendees" => Ok(PopularityMode::Attendees),
        _ => Err(format!("expected checkins or attendees, got {s:?}")),
    }
}

impl CommonArgs {
    fn flags(&self) -> RunConfig {
        RunConfig {
            corpus_dir: self.corpus.clone(),
            checkins: self.checkins.clone(),
            venues: self.venues.clone(),
            social: self.social.clone(),
            events: self.events.clone(),
            timezone_offset_minutes: self.tz_offset,
            top_k: self.top,
            radius_m: self.radius,
            threshold_factor: self.threshold,
            seed: self.seed,
            n_folds: self.folds,
            ndcg_n: self.ndcg_n,
            n_permutations: self.permutations,
            alpha: self.alpha,
            rwr_k: self.rwr_k,
            popularity_mode: self.popularity_mode,
            ..Default::default()
        }
    }
}

enum Failure {
    Config(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use eventlens::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::Io { .. }) => "io",
        Some(E::Parse { .. } | E::Json(_)) => "parse",
        Some(E::UnknownVenue { .. } | E::Coordinate { .. } | E::DuplicateVenue(_) | E::EmptyCategory(_)) => "corpus",
        Some(E::UnknownUser(_) | E::UnknownEvent(_) | E::DuplicateEvent(_)) => "lookup",
        Some(E::EmptyTraining | E::InsufficientData | E::ItemSetMismatch) => "data",
        Some(E::NonConvergence { .. }) => "non_convergence",
        Some(E::FeatureOrderMismatch { .. }) => "feature_order",
        Some(E::InvalidParameter(_)) => "invalid_parameter",
        Some(E::Infeasible(_)) => "infeasible",
        None => "runtime",
    }
}

/// The error chain on one line, skipping causes their parent already prints.
fn one_line(e: &anyhow::Error) -> String {
    let mut message = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !message.ends_with(&text) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&text);
        }
    }
    message.replace('\n', " ")
}

fn resolve(args: &CommonArgs, extra: RunConfig) -> Result<Resolved, Failure> {
    let file = match &args.config {
        Some(p) => RunConfig::from_file(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    let merged = file.overlay(&args.flags()).overlay(&extra);
    let resolved = merged.resolve().map_err(Failure::Config)?;
    let shown = serde_json::to_string(&resolved).unwrap_or_default();
    info!("resolved config: {shown}");
    info!("seed: {}", resolved.experiment.seed);
    Ok(resolved)
}

fn synth_config(args: &SynthArgs) -> Result<SynthConfig, Failure> {
    let mut cfg = match &args.config {
        None => SynthConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            let parsed = if p.extension().is_some_and(|x| x == "json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.message().to_owned())
            };
            parsed.map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match cfg.validate() {
        Err(eventlens::Error::InvalidParameter(m)) => return Err(Failure::Config(m)),
        Err(e) => return Err(Failure::Run(e.into())),
        Ok(()) => {}
    }
    let shown = serde_json::to_string(&cfg).unwrap_or_default();
    info!("resolved config: {shown}");
    info!("seed: {}", cfg.seed);
    Ok(cfg)
}

fn make_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Run(anyhow::anyhow!("cannot create {}: {e}", out.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Run(e.into()))?;
    }
    match cli.command {
        Command::Synth(args) => {
            let cfg = synth_config(&args)?;
            make_out(&args.out)?;
            commands::synth(&cfg, &args.out)?;
        }
        Command::Detect(args) => {
            let cfg = resolve(&args, RunConfig::default())?;
            make_out(&args.out)?;
            commands::detect(&cfg, &args.out)?;
        }
        Command::Score(args) => {
            let extra = RunConfig {
                features: args.features.clone(),
                ..Default::default()
            };
            let cfg = resolve(&args.common, extra)?;
            make_out(&args.common.out)?;
            commands::score(&cfg, &args.common.out)?;
        }
        Command::Evaluate(args) => {
            let extra = RunConfig {
                features: args.features.clone(),
                ..Default::default()
            };
            let cfg = resolve(&args.common, extra)?;
            make_out(&args.common.out)?;
            commands::evaluate(&cfg, &args.common.out)?;
        }
        Command::Fuse(args) => {
            let with_rwr = match (args.with_rwr, args.no_rwr) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            };
            let extra = RunConfig {
                model: args.model.clone(),
                with_rwr,
                lambda: args.lambda,
                n_negatives: args.negatives,
                min_leaf: args.min_leaf,
                max_depth: args.max_depth,
                ..Default::default()
            };
            let cfg = resolve(&args.common, extra)?;
            make_out(&args.common.out)?;
            commands::fuse(&cfg, args.all_variants, &args.common.out)?;
        }
        Command::Analyze(args) => {
            let cfg = resolve(&args, RunConfig::default())?;
            make_out(&args.out)?;
            commands::analyze(&cfg, &args.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(message)) => {
            eprintln!("{}", json!({"error": "config", "message": message}));
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            let message = one_line(&e);
            eprintln!("{}", json!({"error": error_kind(&e), "message": message}));
            ExitCode::from(1)
        }
    }
}
