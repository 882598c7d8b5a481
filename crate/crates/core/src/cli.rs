//! Command-line pipeline: dataset → train → optimize → analyze → mitigate.
//!
//! Every command writes under `--out` and records what it produced in
//! `manifest.json` at the root of that directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    convergence_csv, convergence_map, evaluate_optima, head_tail_abs_error, optima_csv, summarize_errors,
    trajectory_csv, trajectory_errors, ErrorSummary,
};
use crate::datagen::{dimension, generate_dataset, prefix_split, read_dataset, write_dataset, LabeledRecord};
use crate::error::{Error, Result};
use crate::featurize::FeatureMode;
use crate::ga::{config_grid, ga_run, Fitness, GaConfig, GaRunLog, OracleFitness, SurrogateFitness};
use crate::microsim::SimConfig;
use crate::mitigation::{active_learning, Aggregation, EnsembleModel};
use crate::netmodel::{NetworkConfig, RoadNetwork};
use crate::nn::NnSpec;
use crate::plot;
use crate::rng::mix_seed;
use crate::surrogate::{roster, test_error, ModelSpec, SurrogateModel};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Everything a full run needs, in one TOML file. All sections are optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub network: NetworkConfig,
    pub simulation: SimConfig,
    pub dataset: DatasetSection,
    pub training: TrainingSection,
    pub optimize: OptimizeSection,
    pub active: ActiveSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n: usize,
    /// Defaults to 80% of `n`.
    pub train_n: Option<usize>,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n: 25_000,
            train_n: None,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    pub iterations: usize,
    pub population: usize,
    pub runs_per_config: usize,
    pub seed: u64,
    pub best_k: usize,
    pub random_k: usize,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        OptimizeSection {
            iterations: 100,
            population: 120,
            runs_per_config: 5,
            seed: 11,
            best_k: 10,
            random_k: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSection {
    pub rounds: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for ActiveSection {
    fn default() -> Self {
        ActiveSection {
            rounds: 3,
            top_k: 100,
            seed: 13,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.simulation.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(name = "sigsurr", version, about = "Surrogate-assisted traffic-signal offset optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate random settings and write train/test files.
    Dataset(DatasetArgs),
    /// Fit metamodels.
    Train(TrainArgs),
    /// Run the genetic algorithm against a model or the simulator.
    Optimize(OptimizeArgs),
    /// Error at optima, error along trajectories, or PCA of convergence points.
    Analyze(AnalyzeArgs),
    /// Ensembles or active-learning retraining.
    Mitigate(MitigateArgs),
    /// dataset → roster → GA grid for two models → analysis.
    Demo(DemoArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Pipeline TOML; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub train_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainKind {
    Nn,
    Gbt,
    Roster,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub kind: TrainKind,
    /// TOML with the model hyperparameters (nn or gbt kinds).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Roster seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("fitness").required(true).args(["model", "oracle"])))]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub oracle: bool,
    /// Sweep the 20-configuration grid instead of the default configuration.
    #[arg(long)]
    pub ga_grid: bool,
    #[arg(long)]
    pub runs_per_config: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeWhat {
    Errors,
    Trajectories,
    Pca,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub what: AnalyzeWhat,
    /// Directory of run logs; repeat for PCA across models.
    #[arg(long, required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Random test set for the model's baseline error.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub best_k: Option<usize>,
    #[arg(long)]
    pub random_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// PCA on (cos, sin) features instead of raw offsets.
    #[arg(long)]
    pub encoded: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Ensemble,
    Active,
}

#[derive(Args, Debug)]
pub struct MitigateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub strategy: Strategy,
    /// Ensemble members.
    #[arg(long)]
    pub models: Vec<PathBuf>,
    /// Trimmed-mean fraction; plain mean when omitted.
    #[arg(long)]
    pub trim: Option<f64>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Model spec TOML (with a `family` key) for active learning.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub runs_per_config: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

/// Exit status for an error: 1 for problems with the user's input, 2 for
/// failures inside the pipeline.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } | Error::NonFiniteFitness { .. } => 2,
        Error::AtIndex { source, .. } => exit_code(source),
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with(args: impl IntoIterator<Item = OsString>) -> i32 {
    let args: Vec<OsString> = args.into_iter().collect();
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            let mut cmd = <Cli as clap::CommandFactory>::command();
            cmd.build();
            let sub = argv.first().and_then(|name| cmd.find_subcommand_mut(name).cloned());
            let usage = match sub {
                Some(mut sc) => sc.render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("\n{usage}");
            return 1;
        }
    };
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command; `argv` is recorded in the manifest.
pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    match cli.command {
        Command::Dataset(a) => cmd_dataset(&a, argv),
        Command::Train(a) => cmd_train(&a, argv),
        Command::Optimize(a) => cmd_optimize(&a, argv),
        Command::Analyze(a) => cmd_analyze(&a, argv),
        Command::Mitigate(a) => cmd_mitigate(&a, argv),
        Command::Demo(a) => cmd_demo(&a, argv),
    }
}

struct Ctx {
    config: PipelineConfig,
    digest: String,
    out: PathBuf,
    workers: usize,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let (config, bytes) = match &common.config {
            Some(p) => (
                PipelineConfig::load(p)?,
                std::fs::read(p).map_err(|e| Error::io(p, e))?,
            ),
            None => {
                let cfg = PipelineConfig::default();
                let text = toml::to_string(&cfg)?;
                (cfg, text.into_bytes())
            }
        };
        if common.workers == 0 {
            return Err(Error::invalid("--workers must be at least 1"));
        }
        std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
        Ok(Ctx {
            config,
            digest: hex(&Sha256::digest(&bytes)),
            out: common.out.clone(),
            workers: common.workers,
        })
    }

    fn network(&self) -> Result<RoadNetwork> {
        RoadNetwork::from_config(&self.config.network)
    }

    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(p)
    }

    fn write(&self, rel: &str, contents: &str) -> Result<String> {
        let p = self.path(rel)?;
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(rel.to_string())
    }

    fn record(&self, command: &str, argv: &[String], seeds: BTreeMap<String, u64>, artifacts: Vec<String>) -> Result<()> {
        let path = self.out.join("manifest.json");
        let mut manifest = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text)?
        } else {
            RunManifest::default()
        };
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.format_version = REPORT_FORMAT_VERSION;
        manifest.commands.insert(
            command.to_string(),
            ManifestEntry {
                args: argv.to_vec(),
                config_digest: self.digest.clone(),
                seeds,
                artifacts,
            },
        );
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub commands: BTreeMap<String, ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub args: Vec<String>,
    /// SHA-256 of the config file (or of the serialized defaults).
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn cmd_dataset(a: &DatasetArgs, argv: &[String]) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let n = a.n.unwrap_or(ctx.config.dataset.n);
    let seed = a.seed.unwrap_or(ctx.config.dataset.seed);
    let train_n = a
        .train_n
        .or(if a.n.is_some() { None } else { ctx.config.dataset.train_n })
        .unwrap_or(n * 4 / 5);
    if train_n == 0 || train_n >= n {
        return Err(Error::invalid(format!("--train-n must lie in 1..{n} (got {train_n})")));
    }
    let network = ctx.network()?;
    eprintln!("simulating {n} settings");
    let records = generate_dataset(&network, &ctx.config.simulation, n, seed, ctx.workers)?;
    let split = prefix_split(&records, train_n)?;
    let mut artifacts = Vec::new();
    for (name, part) in [("train.txt", &split.train), ("test.txt", &split.test)] {
        write_dataset(part, &ctx.path(name)?)?;
        artifacts.push(name.to_string());
    }
    ctx.record("dataset", argv, seeds(&[("dataset", seed)]), artifacts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEntry {
    pub label: String,
    pub file: String,
    pub train_mean_abs_rel: f64,
    pub test_mean_abs_rel: Option<f64>,
}

fn read_spec<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn train_specs(a: &TrainArgs, seed: u64) -> Result<Vec<ModelSpec>> {
    Ok(match a.kind {
        TrainKind::Roster => {
            if a.spec.is_some() {
                return Err(Error::invalid("--spec does not apply to --kind roster"));
            }
            roster(seed)
        }
        TrainKind::Nn => vec![ModelSpec::Nn(match &a.spec {
            Some(p) => read_spec(p)?,
            None => NnSpec::default(),
        })],
        TrainKind::Gbt => vec![ModelSpec::Gbt(match &a.spec {
            Some(p) => read_spec(p)?,
            None => Default::default(),
        })],
    })
}

/// Trains every spec; returns the models with their report rows.
fn train_all(
    ctx: &Ctx,
    specs: &[ModelSpec],
    train: &[LabeledRecord],
    test: Option<&[LabeledRecord]>,
) -> Result<Vec<(SurrogateModel, TrainEntry)>> {
    specs
        .iter()
        .map(|spec| {
            eprintln!("training {}", spec.label());
            let model = spec.train(train)?;
            let file = ctx.write(&format!("models/{}.json", spec.label()), &model.to_json()?)?;
            let entry = TrainEntry {
                label: spec.label(),
                file,
                train_mean_abs_rel: test_error(&model, train)?.0,
                test_mean_abs_rel: test.map(|t| test_error(&model, t).map(|e| e.0)).transpose()?,
            };
            Ok((model, entry))
        })
        .collect()
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let seed = a.seed.unwrap_or(ctx.config.training.seed);
    let train = read_dataset(&a.train)?;
    let test = a.test.as_deref().map(read_dataset).transpose()?;
    let specs = train_specs(a, seed)?;
    let trained = train_all(&ctx, &specs, &train, test.as_deref())?;
    let entries: Vec<TrainEntry> = trained.into_iter().map(|(_, e)| e).collect();
    let mut artifacts: Vec<String> = entries.iter().map(|e| e.file.clone()).collect();
    artifacts.push(ctx.write("train_report.json", &(serde_json::to_string_pretty(&entries)? + "\n"))?);
    ctx.record("train", argv, seeds(&[("roster", seed)]), artifacts)
}

/// GA configurations with their run seeds, in file order. `population`
/// replaces the default population size; grid variants that set their own
/// size keep it.
pub fn optimize_plan(c: usize, grid: bool, runs: usize, iterations: usize, population: usize, seed: u64) -> Vec<(String, GaConfig)> {
    let configs = if grid {
        config_grid(c, iterations)
    } else {
        vec![GaConfig {
            iterations,
            ..GaConfig::default_for(c)
        }]
    };
    let default_population = GaConfig::default_for(c).population;
    let mut out = Vec::new();
    for (ci, cfg) in configs.into_iter().enumerate() {
        for r in 0..runs {
            let name = format!("c{ci:02}-r{r}");
            let cfg = GaConfig {
                population: if cfg.population == default_population { population } else { cfg.population },
                seed: mix_seed(seed, (ci * 1000 + r) as u64),
                ..cfg.clone()
            };
            out.push((name, cfg));
        }
    }
    out
}

fn run_plan(
    fitness: &dyn Fitness,
    c: usize,
    plan: &[(String, GaConfig)],
    parallel_runs: usize,
) -> Result<Vec<GaRunLog>> {
    if parallel_runs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel_runs)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?;
        pool.install(|| plan.par_iter().map(|(_, cfg)| ga_run(fitness, c, cfg)).collect())
    } else {
        plan.iter().map(|(_, cfg)| ga_run(fitness, c, cfg)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub file: String,
    pub config: String,
    pub best_fitness: f64,
    pub evaluations: usize,
}

/// Runs the plan and writes `logs/<fitness>/<run>.jsonl` plus `runs.json`.
fn optimize_into(
    ctx: &Ctx,
    fitness: &dyn Fitness,
    c: usize,
    plan: &[(String, GaConfig)],
    parallel_runs: usize,
) -> Result<(String, Vec<String>)> {
    let id = fitness.id();
    eprintln!("{} GA runs against {id}", plan.len());
    let logs = run_plan(fitness, c, plan, parallel_runs)?;
    let dir = format!("logs/{id}");
    let mut artifacts = Vec::new();
    let mut summary = Vec::new();
    for ((name, cfg), log) in plan.iter().zip(&logs) {
        let rel = format!("{dir}/{name}.jsonl");
        log.save(&ctx.path(&rel)?)?;
        summary.push(RunSummary {
            file: format!("{name}.jsonl"),
            config: cfg.label(),
            best_fitness: log.best_fitness(),
            evaluations: log.evaluations,
        });
        artifacts.push(rel);
    }
    artifacts.push(ctx.write(&format!("{dir}/runs.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?);
    Ok((dir, artifacts))
}

fn cmd_optimize(a: &OptimizeArgs, argv: &[String]) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let o = &ctx.config.optimize;
    let runs = a.runs_per_config.unwrap_or(o.runs_per_config);
    let iterations = a.iterations.unwrap_or(o.iterations);
    let population = a.population.unwrap_or(o.population);
    let seed = a.seed.unwrap_or(o.seed);
    if runs == 0 {
        return Err(Error::invalid("--runs-per-config must be at least 1"));
    }
    let network = ctx.network()?;
    let c = network.n_intersections();
    let plan = optimize_plan(c, a.ga_grid, runs, iterations, population, seed);
    let (_, artifacts) = match &a.model {
        Some(path) => {
            let model = SurrogateModel::load(path)?;
            model_matches(&model, c, path)?;
            let fitness = SurrogateFitness {
                name: file_stem(path),
                model: &model,
            };
            optimize_into(&ctx, &fitness, c, &plan, ctx.workers)?
        }
        None => {
            let fitness = OracleFitness {
                network: &network,
                config: &ctx.config.simulation,
                workers: ctx.workers,
            };
            optimize_into(&ctx, &fitness, c, &plan, 1)?
        }
    };
    ctx.record("optimize", argv, seeds(&[("ga", seed)]), artifacts)
}

fn model_matches(model: &SurrogateModel, c: usize, path: &Path) -> Result<()> {
    use crate::surrogate::Predictor;
    if model.n_intersections() != c {
        return Err(Error::invalid(format!(
            "{} expects {} intersections, the network has {c}",
            path.display(),
            model.n_intersections()
        )));
    }
    Ok(())
}

/// Loads every `*.jsonl` run log in `dir`, sorted by file name.
pub fn load_logs(dir: &Path) -> Result<Vec<(String, GaRunLog)>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::invalid(format!("{}: no run logs found", dir.display())));
    }
    names
        .into_iter()
        .map(|p| Ok((file_stem(&p), GaRunLog::load(&p)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorsReport {
    pub format_version: u32,
    pub model: String,
    pub runs: Vec<String>,
    pub summary: ErrorSummary,
    pub per_run: Vec<ErrorSummary>,
    pub test_mean_abs_rel: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRun {
    pub run: String,
    pub head_abs_rel: f64,
    pub tail_abs_rel: f64,
    pub initial_oracle_mean: f64,
    pub best_oracle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoriesReport {
    pub format_version: u32,
    pub model: String,
    pub window: usize,
    pub runs: Vec<TrajectoryRun>,
    /// Fraction of runs whose tail error is at least their head error.
    pub frac_growing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub format_version: u32,
    pub mode: FeatureMode,
    pub models: Vec<String>,
    pub explained_variance_ratio: Vec<f64>,
    pub centroids: Vec<(String, Vec<f64>)>,
    pub points: usize,
}

fn selected<'a>(
    logs: &'a [(String, GaRunLog)],
    best_k: usize,
    random_k: usize,
    seed: u64,
) -> Result<Vec<&'a (String, GaRunLog)>> {
    let plain: Vec<GaRunLog> = logs.iter().map(|(_, l)| l.clone()).collect();
    let (best_k, random_k) = if plain.len() < best_k + random_k {
        // Fewer runs than requested: analyze all of them.
        (plain.len(), 0)
    } else {
        (best_k, random_k)
    };
    Ok(crate::ga::select_run_indices(&plain, best_k, random_k, seed)?
        .into_iter()
        .map(|i| &logs[i])
        .collect())
}

fn cmd_analyze(a: &AnalyzeArgs, argv: &[String]) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let o = &ctx.config.optimize;
    let best_k = a.best_k.unwrap_or(o.best_k);
    let random_k = a.random_k.unwrap_or(o.random_k);
    let seed = a.seed.unwrap_or(o.seed);
    let network = ctx.network()?;
    let oracle = OracleFitness {
        network: &network,
        config: &ctx.config.simulation,
        workers: ctx.workers,
    };
    let artifacts = match a.what {
        AnalyzeWhat::Errors => {
            let model_path = a
                .model
                .as_deref()
                .ok_or_else(|| Error::invalid("--what errors needs --model"))?;
            let [dir] = a.logs.as_slice() else {
                return Err(Error::invalid("--what errors takes a single --logs directory"));
            };
            let model = SurrogateModel::load(model_path)?;
            model_matches(&model, network.n_intersections(), model_path)?;
            let name = file_stem(model_path);
            let fitness = SurrogateFitness {
                name: name.clone(),
                model: &model,
            };
            let logs = load_logs(dir)?;
            let chosen = selected(&logs, best_k, random_k, seed)?;
            analyze_errors(&ctx, &name, &chosen, &oracle, &fitness, a.test.as_deref(), &model)?
        }
        AnalyzeWhat::Trajectories => {
            let [dir] = a.logs.as_slice() else {
                return Err(Error::invalid("--what trajectories takes a single --logs directory"));
            };
            let logs = load_logs(dir)?;
            let chosen = selected(&logs, best_k, random_k, seed)?;
            let name = logs[0].1.fitness_id.clone();
            analyze_trajectories(&ctx, &name, &chosen, &oracle)?
        }
        AnalyzeWhat::Pca => {
            let sets: Vec<Vec<(String, GaRunLog)>> = a.logs.iter().map(|d| load_logs(d)).collect::<Result<_>>()?;
            let mut models = Vec::new();
            for logs in &sets {
                let chosen = selected(logs, best_k, random_k, seed)?;
                models.push((logs[0].1.fitness_id.clone(), chosen.into_iter().map(|(_, l)| l).collect::<Vec<_>>()));
            }
            let mode = if a.encoded { FeatureMode::Encoded } else { FeatureMode::Raw };
            analyze_pca(&ctx, &models, mode)?
        }
    };
    ctx.record(
        &format!("analyze-{}", format!("{:?}", a.what).to_lowercase()),
        argv,
        seeds(&[("selection", seed)]),
        artifacts,
    )
}

fn analyze_errors(
    ctx: &Ctx,
    name: &str,
    chosen: &[&(String, GaRunLog)],
    oracle: &dyn Fitness,
    fitness: &dyn Fitness,
    test: Option<&Path>,
    model: &SurrogateModel,
) -> Result<Vec<String>> {
    let mut pairs = Vec::new();
    let mut per_run = Vec::new();
    let mut csv = String::new();
    for (run, log) in chosen {
        let eval = evaluate_optima(log, oracle, fitness)?;
        per_run.push(eval.summary);
        let table = optima_csv(&eval);
        let mut lines = table.lines();
        let header = lines.next().unwrap_or_default();
        if csv.is_empty() {
            csv = format!("run,{header}\n");
        }
        for l in lines {
            csv.push_str(&format!("{run},{l}\n"));
        }
        pairs.extend(eval.pairs);
    }
    let test_mean_abs_rel = match test {
        Some(p) => Some(test_error(model, &read_dataset(p)?)?.0),
        None => None,
    };
    let report = ErrorsReport {
        format_version: REPORT_FORMAT_VERSION,
        model: name.to_string(),
        runs: chosen.iter().map(|(r, _)| r.clone()).collect(),
        summary: summarize_errors(&pairs)?,
        per_run,
        test_mean_abs_rel,
    };
    let svg = plot::scatter(
        &format!("{name}: predictions at GA optima"),
        "simulated wait [s]",
        "predicted wait [s]",
        &[(name.to_string(), pairs.iter().map(|&(p, s)| (s, p)).collect())],
        true,
    );
    Ok(vec![
        ctx.write(&format!("analysis/{name}-errors.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?,
        ctx.write(&format!("analysis/{name}-optima.csv"), &csv)?,
        ctx.write(&format!("analysis/{name}-errors.svg"), &svg)?,
    ])
}

const TRAJECTORY_WINDOW: usize = 10;

fn analyze_trajectories(
    ctx: &Ctx,
    name: &str,
    chosen: &[&(String, GaRunLog)],
    oracle: &dyn Fitness,
) -> Result<Vec<String>> {
    let mut runs = Vec::new();
    let mut csv = String::new();
    let mut series = Vec::new();
    for (run, log) in chosen {
        let curve = trajectory_errors(log, oracle)?;
        let (head, tail) = head_tail_abs_error(&curve, TRAJECTORY_WINDOW);
        let initial = oracle.evaluate(&log.iterations[0].population)?;
        runs.push(TrajectoryRun {
            run: run.clone(),
            head_abs_rel: head,
            tail_abs_rel: tail,
            initial_oracle_mean: initial.iter().sum::<f64>() / initial.len() as f64,
            best_oracle: curve.iter().map(|p| p.oracle).fold(f64::INFINITY, f64::min),
        });
        let table = trajectory_csv(&curve);
        let mut lines = table.lines();
        let header = lines.next().unwrap_or_default();
        if csv.is_empty() {
            csv = format!("run,{header}\n");
        }
        for l in lines {
            csv.push_str(&format!("{run},{l}\n"));
        }
        series.push((run.clone(), curve.iter().map(|p| (p.iteration as f64, p.signed_rel)).collect()));
    }
    let growing = runs.iter().filter(|r| r.tail_abs_rel >= r.head_abs_rel).count();
    let report = TrajectoriesReport {
        format_version: REPORT_FORMAT_VERSION,
        model: name.to_string(),
        window: TRAJECTORY_WINDOW,
        frac_growing: growing as f64 / runs.len() as f64,
        runs,
    };
    let svg = plot::lines(
        &format!("{name}: error along GA trajectories"),
        "iteration",
        "signed relative error",
        &series,
    );
    Ok(vec![
        ctx.write(&format!("analysis/{name}-trajectories.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?,
        ctx.write(&format!("analysis/{name}-trajectories.csv"), &csv)?,
        ctx.write(&format!("analysis/{name}-trajectories.svg"), &svg)?,
    ])
}

fn analyze_pca(ctx: &Ctx, models: &[(String, Vec<&GaRunLog>)], mode: FeatureMode) -> Result<Vec<String>> {
    let map = convergence_map(models, mode)?;
    let centroids = map.centroids();
    let report = PcaReport {
        format_version: REPORT_FORMAT_VERSION,
        mode,
        models: models.iter().map(|(m, _)| m.clone()).collect(),
        explained_variance_ratio: map.pca.explained_variance_ratio.clone(),
        centroids,
        points: map.labels.len(),
    };
    let series: Vec<plot::Series> = report
        .models
        .iter()
        .map(|m| {
            (
                m.clone(),
                map.labels
                    .iter()
                    .zip(&map.pca.projected)
                    .filter(|(l, _)| *l == m)
                    .map(|(_, p)| (p[0], p[1]))
                    .collect(),
            )
        })
        .collect();
    let svg = plot::scatter("Best-of-iteration settings (PCA)", "PC1", "PC2", &series, false);
    Ok(vec![
        ctx.write("analysis/pca.json", &(serde_json::to_string_pretty(&report)? + "\n"))?,
        ctx.write("analysis/pca.csv", &convergence_csv(&map))?,
        ctx.write("analysis/pca.svg", &svg)?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub format_version: u32,
    pub members: Vec<(String, f64)>,
    pub mean_member_test_mean_abs_rel: f64,
    pub ensemble_test_mean_abs_rel: f64,
}

fn cmd_mitigate(a: &MitigateArgs, argv: &[String]) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let test_path = a
        .test
        .as_deref()
        .ok_or_else(|| Error::invalid("--test is required"))?;
    let test = read_dataset(test_path)?;
    match a.strategy {
        Strategy::Ensemble => {
            if a.models.is_empty() {
                return Err(Error::invalid("--strategy ensemble needs --models"));
            }
            let members: Vec<SurrogateModel> = a.models.iter().map(|p| SurrogateModel::load(p)).collect::<Result<_>>()?;
            let aggregation = match a.trim {
                Some(fraction) => Aggregation::TrimmedMean { fraction },
                None => Aggregation::Mean,
            };
            let mut rows = Vec::new();
            for (p, m) in a.models.iter().zip(&members) {
                rows.push((file_stem(p), test_error(m, &test)?.0));
            }
            let ensemble = SurrogateModel::Ensemble(EnsembleModel::new(members, aggregation)?);
            let report = EnsembleReport {
                format_version: REPORT_FORMAT_VERSION,
                mean_member_test_mean_abs_rel: rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64,
                ensemble_test_mean_abs_rel: test_error(&ensemble, &test)?.0,
                members: rows,
            };
            let artifacts = vec![
                ctx.write("ensemble/ensemble.json", &ensemble.to_json()?)?,
                ctx.write("ensemble/report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?,
            ];
            ctx.record("mitigate-ensemble", argv, BTreeMap::new(), artifacts)
        }
        Strategy::Active => {
            let train_path = a
                .train
                .as_deref()
                .ok_or_else(|| Error::invalid("--strategy active needs --train"))?;
            let train = read_dataset(train_path)?;
            let c = dimension(&train)?;
            let network = ctx.network()?;
            if c != network.n_intersections() {
                return Err(Error::invalid("training data does not match the network"));
            }
            let spec: ModelSpec = match &a.spec {
                Some(p) => read_spec(p)?,
                None => ModelSpec::Nn(NnSpec::default()),
            };
            let s = &ctx.config.active;
            let seed = a.seed.unwrap_or(s.seed);
            let ga = GaConfig {
                iterations: a.iterations.unwrap_or(ctx.config.optimize.iterations),
                population: ctx.config.optimize.population,
                seed,
                ..GaConfig::default_for(c)
            };
            let oracle = OracleFitness {
                network: &network,
                config: &ctx.config.simulation,
                workers: ctx.workers,
            };
            let out = active_learning(
                &oracle,
                &spec,
                &train,
                &test,
                &ga,
                a.rounds.unwrap_or(s.rounds),
                a.top_k.unwrap_or(s.top_k),
            )?;
            let train_file = ctx.path("active/train.txt")?;
            write_dataset(&out.train, &train_file)?;
            let artifacts = vec![
                ctx.write("active/report.jsonl", &out.report.to_jsonl()?)?,
                ctx.write("active/model.json", &out.model.to_json()?)?,
                "active/train.txt".to_string(),
            ];
            ctx.record("mitigate-active", argv, seeds(&[("ga", seed)]), artifacts)
        }
    }
}

fn cmd_demo(a: &DemoArgs, argv: &[String]) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let cfg = ctx.config.clone();
    let n = a.n.unwrap_or(cfg.dataset.n);
    let train_n = if a.n.is_some() { n * 4 / 5 } else { cfg.dataset.train_n.unwrap_or(n * 4 / 5) };
    let network = ctx.network()?;
    let c = network.n_intersections();
    let mut artifacts = Vec::new();

    eprintln!("simulating {n} settings");
    let records = generate_dataset(&network, &cfg.simulation, n, cfg.dataset.seed, ctx.workers)?;
    let split = prefix_split(&records, train_n)?;
    write_dataset(&split.train, &ctx.path("train.txt")?)?;
    write_dataset(&split.test, &ctx.path("test.txt")?)?;
    artifacts.extend(["train.txt".to_string(), "test.txt".to_string()]);

    let specs = roster(cfg.training.seed);
    let trained = train_all(&ctx, &specs, &split.train, Some(&split.test))?;
    artifacts.extend(trained.iter().map(|(_, e)| e.file.clone()));
    let entries: Vec<TrainEntry> = trained.iter().map(|(_, e)| e.clone()).collect();
    artifacts.push(ctx.write("train_report.json", &(serde_json::to_string_pretty(&entries)? + "\n"))?);

    // The default network and the default boosted model.
    let default_nn = ModelSpec::Nn(NnSpec::default()).label();
    let default_gbt = ModelSpec::Gbt(Default::default()).label();
    let o = &cfg.optimize;
    let plan = optimize_plan(
        c,
        true,
        a.runs_per_config.unwrap_or(o.runs_per_config),
        a.iterations.unwrap_or(o.iterations),
        o.population,
        o.seed,
    );
    let oracle = OracleFitness {
        network: &network,
        config: &cfg.simulation,
        workers: ctx.workers,
    };
    let mut pca_input = Vec::new();
    for label in [&default_nn, &default_gbt] {
        let (model, _) = trained
            .iter()
            .find(|(_, e)| &e.label == label)
            .ok_or_else(|| Error::invalid(format!("{label} missing from the roster")))?;
        let fitness = SurrogateFitness {
            name: label.clone(),
            model,
        };
        let (dir, arts) = optimize_into(&ctx, &fitness, c, &plan, ctx.workers)?;
        artifacts.extend(arts);
        let logs = load_logs(&ctx.out.join(&dir))?;
        let chosen = selected(&logs, o.best_k, o.random_k, o.seed)?;
        artifacts.extend(analyze_errors(&ctx, label, &chosen, &oracle, &fitness, Some(&ctx.out.join("test.txt")), model)?);
        artifacts.extend(analyze_trajectories(&ctx, label, &chosen, &oracle)?);
        pca_input.push((label.clone(), chosen.into_iter().map(|(_, l)| l.clone()).collect::<Vec<_>>()));
    }
    let refs: Vec<(String, Vec<&GaRunLog>)> = pca_input.iter().map(|(m, ls)| (m.clone(), ls.iter().collect())).collect();
    artifacts.extend(analyze_pca(&ctx, &refs, FeatureMode::Raw)?);
    ctx.record(
        "demo",
        argv,
        seeds(&[("dataset", cfg.dataset.seed), ("roster", cfg.training.seed), ("ga", o.seed)]),
        artifacts,
    )
}
