//! `kinetrail` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 a checked
//! property failed.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use kinetrail::config::{ConfigError, EngineConfig};
use kinetrail::corpus::{
    build_index, generate_synthetic_corpus, read_corpus, theme_consistency, write_corpus, BuildOptions,
    CorpusError, CorpusIndex, Family, IndexParams, SigmaMode,
};
use kinetrail::effect::validate_corpus;
use kinetrail::kinematics::{kinematics_from_graphical_input, GraphicalIntent, Kinematics};
use kinetrail::metrics::kinematic_distance;
use kinetrail::search::{search_topk, SearchConstraint, SearchError, SearchIndex, Transformation};
use kinetrail::semantics::SemanticDescriptor;
use kinetrail::simulator::{DEFAULT_PARTICLE_COUNT, DEFAULT_SAMPLES_PER_LIFETIME};

#[derive(Debug)]
enum CliError {
    Io(String),
    Invalid(String),
    Property(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Property(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Invalid(m) | CliError::Property(m) => m,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(name = "kinetrail", version, about = "Search particle effects by description and motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, index and inspect corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Rank indexed effects against a text and/or kinematic query.
    Search(SearchArgs),
    /// Check metric properties over random pairs of indexed effects.
    EvalMetric(EvalArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Write a synthetic corpus as JSON lines.
    Generate {
        #[arg(long, default_value_t = 839)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated family names; all families when omitted.
        #[arg(long, value_delimiter = ',')]
        families: Vec<Family>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, extract and embed every effect of a corpus file.
    BuildIndex {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trail_steps: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_PARTICLE_COUNT)]
        particles: usize,
        #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_LIFETIME)]
        samples: usize,
        /// Fixed similarity scale; the median pairwise distance when omitted.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        sigma_seed: u64,
    },
    /// Validation and per-theme consistency of a corpus file.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    JsonLines,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    text: Option<String>,
    /// JSON file holding kinematics or a graphical intent.
    #[arg(long)]
    kinematics_file: Option<PathBuf>,
    /// Use an indexed effect's full representation as the query.
    #[arg(long, conflicts_with_all = ["text", "kinematics_file"])]
    like: Option<String>,
    #[arg(long)]
    weight: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn config() -> Result<EngineConfig, CliError> {
    Ok(EngineConfig::from_env()?)
}

fn load_index(path: Option<&Path>, config: &EngineConfig) -> Result<CorpusIndex, CliError> {
    let path = path.unwrap_or(&config.index_path);
    CorpusIndex::load(path).map_err(|e| match e {
        CorpusError::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Invalid(format!("{}: {other}", path.display())),
    })
}

fn generate(size: usize, seed: u64, families: Vec<Family>, out: &Path) -> CliResult {
    let families = if families.is_empty() { Family::ALL.to_vec() } else { families };
    if size == 0 {
        return Err(CliError::Invalid("--size must be positive".into()));
    }
    let defs = generate_synthetic_corpus(&families, size, seed);
    let mut w = BufWriter::new(File::create(out)?);
    write_corpus(&defs, &mut w)?;
    w.flush()?;
    println!("wrote {} effects to {}", defs.len(), out.display());
    Ok(())
}

fn read_corpus_file(path: &Path) -> Result<Vec<kinetrail::EffectDefinition>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(read_corpus(BufReader::new(file))?)
}

#[allow(clippy::too_many_arguments)]
fn build(
    corpus: &Path,
    out: &Path,
    trail_steps: Option<usize>,
    particles: usize,
    samples: usize,
    sigma: Option<f64>,
    sigma_seed: u64,
) -> CliResult {
    let config = config()?;
    let defs = read_corpus_file(corpus)?;
    let (_, embedder) = config.providers()?;
    let options = BuildOptions {
        params: IndexParams {
            trail_steps: trail_steps.unwrap_or(config.trail_steps),
            particle_count: particles,
            samples_per_lifetime: samples,
            embedding_dim: embedder.dimension(),
            ..IndexParams::default()
        },
        sigma: sigma.map_or(SigmaMode::Auto, SigmaMode::Fixed),
        sigma_seed,
        max_in_flight: config.providers.max_in_flight,
    };
    let report = build_index(&defs, embedder.as_ref(), &options)?;
    for f in &report.failures {
        eprintln!("skipped {}: {}", f.id, f.error);
    }
    report.index.save(out)?;
    println!(
        "indexed {} of {} effects, sigma {:.6}, wrote {}",
        report.index.len(),
        defs.len(),
        report.index.sigma,
        out.display()
    );
    Ok(())
}

fn stats(corpus: &Path) -> CliResult {
    let defs = read_corpus_file(corpus)?;
    let mut themes: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &defs {
        *themes.entry(d.theme.as_str()).or_default() += 1;
    }
    println!("effects: {}", defs.len());
    for (theme, n) in &themes {
        println!("theme {theme}: {n}");
    }
    let violations = validate_corpus(&defs);
    println!("validation violations: {}", violations.len());
    for (i, v) in violations.iter().take(20) {
        println!("  line {}: {v}", i + 1);
    }
    if let Ok(g) = theme_consistency(&defs) {
        println!(
            "consistency within/between: duration {:.6}/{:.6}, shape {:.6}/{:.6}, trail {:.6}/{:.6}",
            g.within.duration, g.between.duration, g.within.shape, g.between.shape, g.within.trail, g.between.trail
        );
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("{} invalid definitions", violations.len())))
    }
}

/// Contents accepted by `--kinematics-file`.
#[derive(Deserialize)]
#[serde(untagged)]
enum KinematicsInput {
    Kinematics(Kinematics),
    Graphical(GraphicalIntent),
}

#[derive(Serialize)]
struct ResultLine<'a> {
    rank: usize,
    effect_id: &'a str,
    similarity: f64,
    transformation: &'a Transformation,
    kinematic_distance: Option<f64>,
}

fn search(args: SearchArgs) -> CliResult {
    let config = config()?;
    let corpus = load_index(args.index.as_deref(), &config)?;
    let steps = corpus.params.trail_steps;
    let index = SearchIndex::new(corpus, config.search.clone())?;

    let constraint = if let Some(id) = &args.like {
        let rep = index
            .representation(id)
            .ok_or_else(|| CliError::Invalid(format!("unknown effect {id:?}")))?;
        SearchConstraint::from_representation(rep, args.weight.unwrap_or(kinetrail::search::DEFAULT_WEIGHT))?
    } else {
        let kinematics = match &args.kinematics_file {
            Some(path) => {
                let input: KinematicsInput = serde_json::from_str(&read_file(path)?)
                    .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
                Some(match input {
                    KinematicsInput::Kinematics(k) => k,
                    KinematicsInput::Graphical(g) => kinematics_from_graphical_input(&g, steps)
                        .map_err(|e| CliError::Invalid(e.to_string()))?,
                })
            }
            None => None,
        };
        // check the weight rule before any provider call
        if args.text.is_none() {
            SearchConstraint::new(None, kinematics.clone(), args.weight)?;
        }
        let semantic = match &args.text {
            Some(text) => {
                let (llm, embedder) = config.providers()?;
                Some(
                    SemanticDescriptor::from_user_text(text, llm.as_ref(), embedder.as_ref())
                        .map_err(|e| CliError::Invalid(e.to_string()))?,
                )
            }
            None => None,
        };
        SearchConstraint::new(semantic, kinematics, args.weight)?
    };

    let k = args.k.unwrap_or(index.config().top_k);
    let results = search_topk(&constraint, &index, k, &HashSet::new())?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (i, r) in results.iter().enumerate() {
        match args.format {
            Format::Text => writeln!(
                out,
                "{}\t{}\t{:.6}\t{}",
                i + 1,
                r.effect_id,
                r.similarity,
                r.best_transformation
            )?,
            Format::JsonLines => {
                let line = ResultLine {
                    rank: i + 1,
                    effect_id: &r.effect_id,
                    similarity: r.similarity,
                    transformation: &r.best_transformation,
                    kinematic_distance: r.kinematic_distance,
                };
                serde_json::to_writer(&mut out, &line).map_err(|e| CliError::Io(e.to_string()))?;
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[i]
}

fn eval_metric(args: EvalArgs) -> CliResult {
    let config = config()?;
    let corpus = load_index(args.index.as_deref(), &config)?;
    if corpus.len() < 2 {
        return Err(CliError::Invalid("index needs at least two effects".into()));
    }
    let mut params = corpus.params.metric;
    params.sigma = corpus.sigma;
    let reps: Vec<&Kinematics> = corpus.entries.values().map(|e| &e.representation.kinematics).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (mut symmetry, mut negativity, mut identity) = (0usize, 0usize, 0usize);
    let mut times = Vec::with_capacity(args.pairs);
    for _ in 0..args.pairs {
        let a = reps[rng.gen_range(0..reps.len())];
        let b = reps[rng.gen_range(0..reps.len())];
        let start = Instant::now();
        let ab = kinematic_distance(a, b, &params).map_err(|e| CliError::Invalid(e.to_string()))?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        let ba = kinematic_distance(b, a, &params).map_err(|e| CliError::Invalid(e.to_string()))?;
        let aa = kinematic_distance(a, a, &params).map_err(|e| CliError::Invalid(e.to_string()))?;
        symmetry += usize::from(ab.to_bits() != ba.to_bits());
        negativity += usize::from(!(ab >= 0.0));
        identity += usize::from(aa > 1e-9);
    }
    let total = symmetry + negativity + identity;
    println!("pairs: {}", args.pairs);
    println!("seed: {}", args.seed);
    println!("symmetry violations: {symmetry}");
    println!("negativity violations: {negativity}");
    println!("identity violations: {identity}");
    println!("violations: {total}");
    if !times.is_empty() {
        times.sort_by(f64::total_cmp);
        eprintln!(
            "timing ms: p50 {:.3}, p90 {:.3}, p99 {:.3}",
            percentile(&times, 0.5),
            percentile(&times, 0.9),
            percentile(&times, 0.99)
        );
    }
    if total == 0 {
        Ok(())
    } else {
        Err(CliError::Property(format!("{total} metric property violations")))
    }
}

fn serve(index: Option<PathBuf>) -> CliResult {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_ansi(use_color())
        .with_writer(io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime
        .block_on(kinetrail_server::run_from_env(index.as_deref()))
        .map_err(|e| match e {
            kinetrail_server::StartupError::Io(io) => CliError::Io(io.to_string()),
            kinetrail_server::StartupError::Index(CorpusError::Io(io)) => CliError::Io(io.to_string()),
            other => CliError::Invalid(other.to_string()),
        })
}

fn use_color() -> bool {
    std::env::var_os("NO_COLOR").is_none_or(|v| v.is_empty()) && io::stderr().is_terminal()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corpus(CorpusCommand::Generate {
            size,
            seed,
            families,
            out,
        }) => generate(size, seed, families, &out),
        Command::Corpus(CorpusCommand::BuildIndex {
            corpus,
            out,
            trail_steps,
            particles,
            samples,
            sigma,
            sigma_seed,
        }) => build(&corpus, &out, trail_steps, particles, samples, sigma, sigma_seed),
        Command::Corpus(CorpusCommand::Stats { corpus }) => stats(&corpus),
        Command::Search(args) => search(args),
        Command::EvalMetric(args) => eval_metric(args),
        Command::Serve { index } => serve(index),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let prefix = if use_color() { "\x1b[31merror:\x1b[0m" } else { "error:" };
            eprintln!("{prefix} {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
