//! `forestcut` command-line driver.
//!
//! Exit codes: 0 on success, 1 when a run fails (unreadable input, engine
//! error), 2 for usage errors, including invalid flag combinations.

use std::fs;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use forestcut::bench::{benchmark, summarize, summary_csv, table_csv, BenchmarkConfig};
use forestcut::datagen::{generate_synthetic, GeneratorConfig};
use forestcut::dataset::WaveformDataset;
use forestcut::forest::Forest;
use forestcut::metrics::{ami, recovery_rates};
use forestcut::oracle::{write_log, Clock, FeedbackSource, GroundTruthOracle, NoiseModel, NoisyOracle};
use forestcut::search::{partition_labels, run, PurityMode, RunReport, SearchConfig};
use forestcut::treegen::{
    build_linkages, read_trees, write_ensemble_dir, EnsembleConfig, LinkageTree, Method, Metric, Preprocess,
    Transform, PCA_COMPONENTS,
};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "forestcut", version, about = "Flatten a forest of clustering trees with pairwise queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic waveform dataset.
    GenData(GenData),
    /// Build the hierarchical-clustering ensemble for a dataset.
    BuildTrees(BuildTrees),
    /// Run the block search against a simulated oracle.
    Run(Box<RunArgs>),
    /// Sweep the number of trees and tabulate cluster count, AMI and queries.
    Benchmark(Box<BenchArgs>),
    /// Score a run report against a labeled dataset.
    Metrics(MetricsArgs),
    /// Start the curation session service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct GeneratorArgs {
    #[arg(long, default_value_t = 96)]
    clusters: usize,
    #[arg(long, default_value_t = 5)]
    sessions: usize,
    #[arg(long, default_value_t = 0.25)]
    dropout: f64,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 38)]
    samples: usize,
    #[arg(long, default_value_t = 6.0)]
    drift_step: f64,
    #[arg(long, default_value_t = 0.35)]
    noise_sd: f64,
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 30.0)]
    amplitude: f64,
}

impl GeneratorArgs {
    fn config(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_clusters: self.clusters,
            n_sessions: self.sessions,
            dropout: self.dropout,
            channels: self.channels,
            samples_per_channel: self.samples,
            drift_step: self.drift_step,
            noise_sd: self.noise_sd,
            cluster_separation: self.separation,
            amplitude: self.amplitude,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransformArg {
    None,
    Pca,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "raw,derivative")]
    preprocess: Vec<PreprocessArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "none,pca")]
    transform: Vec<TransformArg>,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "euclidean,sqeuclidean,manhattan,chebyshev,correlation"
    )]
    metric: Vec<MetricArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "single,average,complete,weighted")]
    linkage: Vec<MethodArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PreprocessArg {
    Raw,
    Derivative,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Euclidean,
    Sqeuclidean,
    Manhattan,
    Chebyshev,
    Correlation,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Single,
    Average,
    Complete,
    Weighted,
}

impl GridArgs {
    fn config(&self) -> EnsembleConfig {
        EnsembleConfig {
            preprocess: self
                .preprocess
                .iter()
                .map(|p| match p {
                    PreprocessArg::Raw => Preprocess::Raw,
                    PreprocessArg::Derivative => Preprocess::Derivative,
                })
                .collect(),
            transform: self
                .transform
                .iter()
                .map(|t| match t {
                    TransformArg::None => Transform::None,
                    TransformArg::Pca => Transform::Pca(PCA_COMPONENTS),
                })
                .collect(),
            metric: self
                .metric
                .iter()
                .map(|m| match m {
                    MetricArg::Euclidean => Metric::Euclidean,
                    MetricArg::Sqeuclidean => Metric::SqEuclidean,
                    MetricArg::Manhattan => Metric::Manhattan,
                    MetricArg::Chebyshev => Metric::Chebyshev,
                    MetricArg::Correlation => Metric::Correlation,
                })
                .collect(),
            linkage: self
                .linkage
                .iter()
                .map(|m| match m {
                    MethodArg::Single => Method::Single,
                    MethodArg::Average => Method::Average,
                    MethodArg::Complete => Method::Complete,
                    MethodArg::Weighted => Method::Weighted,
                })
                .collect(),
        }
    }
}

#[derive(Args, Debug)]
struct BuildTrees {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    /// Output directory for linkage files and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Exact,
    Trusting,
}

impl From<ModeArg> for PurityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => PurityMode::Exact,
            ModeArg::Trusting => PurityMode::Trusting,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseModelArg {
    PerConsultation,
    FixedCorruption,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClockArg {
    Logical,
    Wall,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum OracleArg {
    Truth,
    Noisy(f64),
}

fn parse_oracle(s: &str) -> Result<OracleArg, String> {
    if s == "truth" {
        return Ok(OracleArg::Truth);
    }
    let rate = s.strip_prefix("noisy:").ok_or("expected `truth` or `noisy:<rate>`")?;
    let rate: f64 = rate.parse().map_err(|_| format!("bad flip rate `{rate}`"))?;
    if !(0.0..1.0).contains(&rate) {
        return Err(format!("flip rate {rate} is not in [0, 1)"));
    }
    Ok(OracleArg::Noisy(rate))
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Ensemble directory or individual linkage files.
    #[arg(long, num_args = 1.., required = true)]
    trees: Vec<PathBuf>,
    /// Labeled dataset supplying the simulated oracle's truth.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = parse_oracle, default_value = "truth")]
    oracle: OracleArg,
    #[arg(long, value_enum, default_value = "per-consultation")]
    noise_model: NoiseModelArg,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Consultations per pair for majority voting; must be odd.
    #[arg(long, default_value_t = 1)]
    majority_k: usize,
    /// Comma-separated tree indices to use.
    #[arg(long, value_delimiter = ',', conflicts_with = "sample_trees")]
    tree_subset: Option<Vec<usize>>,
    /// Use a seeded random subset of this many trees.
    #[arg(long)]
    sample_trees: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "logical")]
    clock: ClockArg,
    /// Output directory for report.json and queries.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated tree counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    m: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Master seed; also seeds the generated dataset when --dataset is absent.
    #[arg(long)]
    seed: u64,
    /// Worker threads for trials (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Record wall-clock runtimes; otherwise runtime columns are NA.
    #[arg(long)]
    timing: bool,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Labeled dataset; generated from the flags below when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Prebuilt ensemble; built from the dataset when absent.
    #[arg(long, num_args = 1.., requires = "dataset")]
    trees: Option<Vec<PathBuf>>,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Output directory for table.csv, summary.csv and config.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// report.json written by `run`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long)]
    data_dir: PathBuf,
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::ArgumentConflict, msg).exit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::BuildTrees(a) => build_trees(a),
        Command::Run(a) => run_cmd(*a),
        Command::Benchmark(a) => bench_cmd(*a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn labels_of(dataset: &WaveformDataset, path: &Path) -> Result<Vec<usize>> {
    match &dataset.labels {
        Some(l) => Ok(l.clone()),
        None => bail!("{} has no ground-truth labels", path.display()),
    }
}

fn load_forest(paths: &[PathBuf], dataset: &WaveformDataset) -> Result<(Vec<String>, Forest)> {
    let trees: Vec<(String, LinkageTree)> = read_trees(paths)?;
    let forest = Forest::from_linkages(&trees)?;
    if forest.width() != dataset.len() {
        bail!("trees have {} leaves but the dataset has {} units", forest.width(), dataset.len());
    }
    Ok((trees.into_iter().map(|t| t.0).collect(), forest))
}

fn gen_data(a: GenData) -> Result<()> {
    let cfg = a.generator.config(a.seed);
    let dataset = generate_synthetic(&cfg)?;
    let text = format!("# generator {}\n{}", serde_json::to_string(&cfg)?, dataset.to_text());
    write_file(&a.out, text)?;
    eprintln!("wrote {} units to {}", dataset.len(), a.out.display());
    Ok(())
}

fn build_trees(a: BuildTrees) -> Result<()> {
    let dataset = WaveformDataset::load(&a.dataset)?;
    let grid = a.grid.config();
    let ensemble = build_linkages(&dataset, &grid)?;
    let skipped: Vec<(String, String)> = ensemble.skipped.iter().map(|(c, r)| (c.tag(), r.clone())).collect();
    let config = json!({ "dataset": a.dataset, "grid": grid });
    write_ensemble_dir(&a.out, &ensemble.tagged(), &skipped, config)?;
    for (tag, reason) in &skipped {
        eprintln!("skipped {tag}: {reason}");
    }
    eprintln!("wrote {} trees to {}", ensemble.trees.len(), a.out.display());
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<()> {
    if matches!(a.oracle, OracleArg::Noisy(_)) && a.seed.is_none() {
        usage_error("--oracle noisy requires --seed");
    }
    if a.sample_trees.is_some() && a.seed.is_none() {
        usage_error("--sample-trees requires --seed");
    }
    if a.majority_k % 2 == 0 {
        usage_error("--majority-k must be odd");
    }
    let dataset = WaveformDataset::load(&a.dataset)?;
    let labels = labels_of(&dataset, &a.dataset)?;
    let (tags, forest) = load_forest(&a.trees, &dataset)?;
    let seed = a.seed.unwrap_or(0);
    let tree_subset = match (a.sample_trees, &a.tree_subset) {
        (Some(m), _) => {
            if m == 0 || m > forest.len() {
                usage_error(format!("--sample-trees {m} is outside 1..={}", forest.len()));
            }
            Some(forestcut::bench::draw_trees(seed, forest.len(), m))
        }
        (None, Some(s)) => Some(s.clone()),
        (None, None) => None,
    };
    let cfg = SearchConfig {
        mode: a.mode.into(),
        majority_k: a.majority_k,
        seed,
        tree_subset: tree_subset.clone(),
        stop_after_binary_search: false,
        clock: match a.clock {
            ClockArg::Logical => Clock::Logical,
            ClockArg::Wall => Clock::Wall,
        },
    };
    let (mut source, oracle_echo): (Box<dyn FeedbackSource>, Value) = match a.oracle {
        OracleArg::Truth => (Box::new(GroundTruthOracle::new(labels)), json!("truth")),
        OracleArg::Noisy(rate) => {
            let model = match a.noise_model {
                NoiseModelArg::PerConsultation => NoiseModel::PerConsultation,
                NoiseModelArg::FixedCorruption => NoiseModel::FixedCorruption,
            };
            (
                Box::new(NoisyOracle::new(labels, rate, model, seed)?),
                json!({ "noisy": rate, "noise_model": model }),
            )
        }
    };
    let echo = json!({
        "dataset": a.dataset,
        "trees": a.trees,
        "tree_tags": tags,
        "oracle": oracle_echo,
        "mode": cfg.mode,
        "majority_k": cfg.majority_k,
        "seed": a.seed,
        "tree_subset": tree_subset,
        "sample_trees": a.sample_trees,
        "clock": cfg.clock,
    });
    let result = run(&forest, source.as_mut(), &cfg)
        .map_err(|f| anyhow::anyhow!("{f} ({} blocks found before the failure)", f.partial.len()))?;
    create_dir(&a.out)?;
    let log_path = a.out.join("queries.jsonl");
    let file = fs::File::create(&log_path).with_context(|| format!("writing {}", log_path.display()))?;
    write_log(BufWriter::new(file), &result.log).with_context(|| format!("writing {}", log_path.display()))?;
    let report = result.report(echo);
    let report_path = a.out.join("report.json");
    write_file(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    eprintln!(
        "{} clusters, {} oracle consultations, {} inferred",
        report.partition.len(),
        report.counters.engine.oracle_consultations,
        report.counters.engine.inferred_answers
    );
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    if a.trials == 0 || a.m.is_empty() || a.m.contains(&0) {
        usage_error("--trials and every --m value must be positive");
    }
    if a.jobs == Some(0) {
        usage_error("--jobs must be positive");
    }
    let (dataset, data_echo) = match &a.dataset {
        Some(p) => (WaveformDataset::load(p)?, json!({ "path": p })),
        None => {
            let cfg = a.generator.config(a.seed);
            (generate_synthetic(&cfg)?, json!({ "generator": cfg }))
        }
    };
    let truth = match &a.dataset {
        Some(p) => labels_of(&dataset, p)?,
        None => labels_of(&dataset, Path::new("<generated>"))?,
    };
    let grid = a.grid.config();
    let (forest, tree_echo) = match &a.trees {
        Some(paths) => (load_forest(paths, &dataset)?.1, json!({ "paths": paths })),
        None => (build_linkages(&dataset, &grid)?.forest()?, json!({ "grid": grid })),
    };
    if let Some(&m) = a.m.iter().find(|&&m| m > forest.len()) {
        bail!("--m {m} exceeds the ensemble size {}", forest.len());
    }
    let cfg = BenchmarkConfig {
        m_grid: a.m.clone(),
        trials: a.trials,
        master_seed: a.seed,
        search: SearchConfig { mode: a.mode.into(), ..SearchConfig::default() },
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = a.jobs {
        pool = pool.num_threads(j);
    }
    let rows = pool.build()?.install(|| benchmark(&forest, &truth, &cfg))?;
    create_dir(&a.out)?;
    write_file(&a.out.join("table.csv"), table_csv(&rows, a.timing))?;
    write_file(&a.out.join("summary.csv"), summary_csv(&summarize(&rows), a.timing))?;
    let echo = json!({
        "dataset": data_echo,
        "trees": tree_echo,
        "ensemble_size": forest.len(),
        "units": dataset.len(),
        "benchmark": cfg,
        "timing": a.timing,
    });
    write_file(&a.out.join("config.json"), serde_json::to_string_pretty(&echo)? + "\n")?;
    eprintln!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn metrics_cmd(a: MetricsArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report: RunReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.report.display()))?;
    let dataset = WaveformDataset::load(&a.dataset)?;
    let truth = labels_of(&dataset, &a.dataset)?;
    let predicted = partition_labels(&report.partition);
    if predicted.len() != truth.len() {
        bail!("report covers {} units but {} has {}", predicted.len(), a.dataset.display(), truth.len());
    }
    let sessions: Vec<usize> = dataset.units.iter().map(|u| u.session).collect();
    let recovery = recovery_rates(&report.partition, &truth, &sessions)?;
    let true_clusters = truth.iter().collect::<std::collections::BTreeSet<_>>().len();
    let out = json!({
        "report": a.report,
        "dataset": a.dataset,
        "units": truth.len(),
        "n_clusters": report.partition.len(),
        "true_clusters": true_clusters,
        "ami": ami(&predicted, &truth)?,
        "oracle_consultations": report.counters.engine.oracle_consultations,
        "inferred_answers": report.counters.engine.inferred_answers,
        "perfect_recovery_fraction": recovery.perfect_fraction,
        "recovery_histogram": recovery.histogram,
        "recovery_rates": recovery.rates,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let addr = SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(forestcut_service::serve(addr, &a.data_dir))?;
    Ok(())
}
