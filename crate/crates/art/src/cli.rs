//! Command-line interface: dataset builders, Truster training, pipeline
//! runs, evaluation, sweeps, and the cascade simulator.

use std::collections::BTreeMap;
use std::error::Error;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::asker::{build_asker_training_data, records_to_jsonl};
use crate::backend::{Backend, RemoteBackend, RemoteConfig, ScriptedBackend, ScriptedFallback};
use crate::pipeline::{
    self, assemble_report, collect_scored_groups, curve_to_csv, evaluate, load_dataset,
    refinement_rate_sweep, run_dataset, write_report_json, write_trace_jsonl, PipelineConfig,
    PipelineSweepOrder, Split,
};
use crate::simulator::{expected_accuracy, simulate, sweep_fraction, CascadeParams, SweepOrder, TrustMode};
use crate::truster::{
    build_preference_pairs, train, FeatureConfig, PreferencePair, TrainParams, TrusterModel,
};
use crate::types::TaskKind;

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "art", version, about = "Ask-Refine-Trust reasoning refinement pipeline")]
struct Cli {
    /// Pipeline configuration JSON (backends plus stage wiring).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    MathWord,
    BooleanQa,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::MathWord => TaskKind::MathWord,
            TaskArg::BooleanQa => TaskKind::BooleanQa,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::All => Split::All,
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepOrderArg {
    Ask,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrustModeArg {
    NoTrust,
    WithTrust,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    /// Keep only the first N queries.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct SamplingArgs {
    /// Samples per query.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Comma-separated temperature schedule, one per sample.
    #[arg(long, default_value = "0,0.3,0.4,0.7,0.8", value_delimiter = ',')]
    temps: Vec<f64>,
    /// Backend id used to sample predictions (defaults to the configured
    /// predictor).
    #[arg(long)]
    source_backend: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate initial predictions over a dataset.
    Predict(DatasetArgs),
    /// Build the Asker fine-tuning dataset (JSONL).
    BuildAskerData {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build Truster preference pairs (JSONL).
    BuildTrusterData {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long, default_value_t = 10)]
        max_pairs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the Truster ranking model from preference pairs.
    TrainTruster {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = crate::truster::DEFAULT_DIMENSION)]
        dim: usize,
        #[arg(long, default_value_t = crate::truster::DEFAULT_HASH_SEED)]
        feature_seed: u64,
    },
    /// Run the configured mode over a dataset (gold optional; trace only).
    Run(DatasetArgs),
    /// Evaluate the configured mode over a gold-labeled dataset.
    Eval(DatasetArgs),
    /// Sweep the forced refinement fraction and emit curve.csv.
    Sweep {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1", value_delimiter = ',')]
        fractions: Vec<f64>,
        #[arg(long, value_enum, default_value = "ask")]
        sweep_order: SweepOrderArg,
    },
    /// Closed-form and Monte Carlo cascade simulation.
    Simulate {
        /// JSON file with the cascade parameters.
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "with-trust")]
        trust_mode: TrustModeArg,
        /// Fraction selection order for the sweep curve.
        #[arg(long, value_enum, default_value = "ask")]
        sweep_order: SweepOrderArg,
    },
}

/// Backend definitions in the configuration file, keyed by backend id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendDef {
    Scripted {
        path: PathBuf,
        #[serde(default)]
        fallback: ScriptedFallback,
    },
    Remote {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
        #[serde(default)]
        max_retries: Option<u32>,
        #[serde(default)]
        max_in_flight: Option<u32>,
    },
}

/// Top-level configuration file: pipeline settings plus backend wiring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub backends: BTreeMap<String, BackendDef>,
    pub predictor: String,
    #[serde(default)]
    pub asker: Option<String>,
    #[serde(default)]
    pub refiner: Option<String>,
    #[serde(default)]
    pub truster_model: Option<PathBuf>,
}

pub struct ResolvedConfig {
    pub pipeline: PipelineConfig,
    backends: BTreeMap<String, Arc<dyn Backend>>,
    predictor: String,
    asker: Option<String>,
    refiner: Option<String>,
    truster_path: Option<PathBuf>,
    truster: Option<TrusterModel>,
}

fn instantiate_backend(
    id: &str,
    def: &BackendDef,
    base_dir: &Path,
) -> Result<Arc<dyn Backend>, Box<dyn Error>> {
    match def {
        BackendDef::Scripted { path, fallback } => {
            let resolved = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            Ok(Arc::new(ScriptedBackend::from_path(id, *fallback, &resolved)?))
        }
        BackendDef::Remote { base_url, model, api_key_env, timeout_secs, max_retries, max_in_flight } => {
            let mut config = RemoteConfig::new(id, base_url.clone(), model.clone());
            if let Some(env) = api_key_env {
                config.api_key_env = env.clone();
            }
            if let Some(t) = timeout_secs {
                config.timeout_secs = *t;
            }
            if let Some(r) = max_retries {
                config.max_retries = *r;
            }
            if let Some(c) = max_in_flight {
                config.max_in_flight = *c;
            }
            Ok(Arc::new(RemoteBackend::new(config)))
        }
    }
}

pub fn load_config(path: &Path) -> Result<ResolvedConfig, Box<dyn Error>> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| format!("reading config {}: {e}", path.display()))?;
    let file: ConfigFile =
        serde_json::from_str(&raw).map_err(|e| format!("parsing config: {e}"))?;
    let base_dir = path.parent().unwrap_or(Path::new("."));

    let mut backends: BTreeMap<String, Arc<dyn Backend>> = BTreeMap::new();
    for (id, def) in &file.backends {
        backends.insert(id.clone(), instantiate_backend(id, def, base_dir)?);
    }
    for (role, id) in [
        ("predictor", Some(&file.predictor)),
        ("asker", file.asker.as_ref()),
        ("refiner", file.refiner.as_ref()),
    ] {
        if let Some(id) = id {
            if !backends.contains_key(id) {
                return Err(format!("{role} backend {id:?} is not defined").into());
            }
        }
    }
    let truster_path = file.truster_model.as_ref().map(|p| {
        if p.is_absolute() {
            p.clone()
        } else {
            base_dir.join(p)
        }
    });
    Ok(ResolvedConfig {
        pipeline: file.pipeline,
        backends,
        predictor: file.predictor,
        asker: file.asker,
        refiner: file.refiner,
        truster_path,
        truster: None,
    })
}

impl ResolvedConfig {
    pub fn backend(&self, id: &str) -> Result<&dyn Backend, Box<dyn Error>> {
        self.backends
            .get(id)
            .map(|b| b.as_ref())
            .ok_or_else(|| format!("backend {id:?} is not defined").into())
    }

    /// Load the Truster model referenced by the config. Deferred so that
    /// data-building subcommands can run before the model file exists.
    pub fn load_truster(&mut self) -> Result<(), Box<dyn Error>> {
        if self.truster.is_none() {
            if let Some(path) = &self.truster_path {
                self.truster = Some(TrusterModel::load(path)?);
            }
        }
        Ok(())
    }

    pub fn components(&self) -> Result<pipeline::Components<'_>, Box<dyn Error>> {
        Ok(pipeline::Components {
            predictor: self.backend(&self.predictor)?,
            asker: match &self.asker {
                Some(id) => Some(self.backend(id)?),
                None => None,
            },
            refiner: match &self.refiner {
                Some(id) => Some(self.backend(id)?),
                None => None,
            },
            truster: self.truster.as_ref(),
        })
    }
}

fn require_config(cli: &Cli) -> Result<ResolvedConfig, Box<dyn Error>> {
    let path = cli
        .config
        .as_ref()
        .ok_or("this subcommand needs --config pointing at a pipeline config JSON")?;
    load_config(path)
}

fn load_queries(args: &DatasetArgs) -> Result<Vec<crate::types::Query>, Box<dyn Error>> {
    let mut queries = load_dataset(&args.dataset, args.task.into(), args.split.into())?;
    if let Some(limit) = args.limit {
        queries.truncate(limit);
    }
    Ok(queries)
}

fn read_pairs(path: &Path) -> Result<Vec<PreferencePair>, Box<dyn Error>> {
    let content = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair = serde_json::from_str(line)
            .map_err(|e| format!("pairs line {}: {e}", lineno + 1))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn write_pairs_jsonl(pairs: &[PreferencePair], path: &Path) -> Result<(), Box<dyn Error>> {
    let mut file = std::fs::File::create(path)?;
    for pair in pairs {
        writeln!(file, "{}", serde_json::to_string(pair)?)?;
    }
    Ok(())
}

pub fn run() -> std::process::ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    std::fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Predict(args) => cmd_predict(cli, args),
        Command::BuildAskerData { dataset, sampling, out } => {
            cmd_build_asker_data(cli, dataset, sampling, out.as_deref())
        }
        Command::BuildTrusterData { dataset, sampling, max_pairs, out } => {
            cmd_build_truster_data(cli, dataset, sampling, *max_pairs, out.as_deref())
        }
        Command::TrainTruster { pairs, out, epochs, lr, batch_size, l2, dim, feature_seed } => {
            cmd_train_truster(
                cli,
                pairs,
                out.as_deref(),
                TrainParams {
                    epochs: *epochs,
                    learning_rate: *lr,
                    batch_size: *batch_size,
                    seed: cli.seed,
                    l2: *l2,
                },
                FeatureConfig::new(*dim, *feature_seed)?,
            )
        }
        Command::Run(args) => cmd_run(cli, args, false),
        Command::Eval(args) => cmd_run(cli, args, true),
        Command::Sweep { dataset, fractions, sweep_order } => {
            cmd_sweep(cli, dataset, fractions, *sweep_order)
        }
        Command::Simulate { params, n, fractions, trust_mode, sweep_order } => {
            cmd_simulate(cli, params, *n, fractions.as_deref(), *trust_mode, *sweep_order)
        }
    }
}

fn cmd_predict(cli: &Cli, args: &DatasetArgs) -> CliResult {
    let config = require_config(cli)?;
    let queries = load_queries(args)?;
    let cfg = PipelineConfig {
        mode: pipeline::PipelineMode::InitialOnly,
        ..config.pipeline.clone()
    };
    let comps = pipeline::Components::predictor_only(config.backend(&config.predictor)?);
    let traces = run_dataset(&queries, &cfg, &comps)?;
    let out = cli.out_dir.join("predictions.jsonl");
    let mut file = std::fs::File::create(&out)?;
    for trace in &traces {
        let line = serde_json::json!({
            "query_id": trace.query_id,
            "prediction": trace.initial,
            "correct": trace.correct_initial,
        });
        writeln!(file, "{line}")?;
    }
    println!("wrote {} predictions to {}", traces.len(), out.display());
    Ok(())
}

fn cmd_build_asker_data(
    cli: &Cli,
    dataset: &DatasetArgs,
    sampling: &SamplingArgs,
    out: Option<&Path>,
) -> CliResult {
    let config = require_config(cli)?;
    let queries = load_queries(dataset)?;
    let backend_id = sampling.source_backend.as_ref().unwrap_or(&config.predictor);
    let backend = config.backend(backend_id)?;
    let build = build_asker_training_data(
        &queries,
        backend,
        sampling.k,
        &sampling.temps,
        config.pipeline.prediction_style,
        config.pipeline.workers,
    )?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out_dir.join("asker_data.jsonl"));
    std::fs::write(&out, records_to_jsonl(&build.records))?;
    let s = build.stats;
    println!(
        "asker data: {} queries, {} raw records, {} kept, {} duplicate(s) dropped, \
         {} failed slot(s), {} query(ies) skipped -> {}",
        s.queries, s.raw_records, s.kept_records, s.dropped_duplicates, s.failed_slots,
        s.skipped_queries, out.display()
    );
    Ok(())
}

fn cmd_build_truster_data(
    cli: &Cli,
    dataset: &DatasetArgs,
    sampling: &SamplingArgs,
    max_pairs: usize,
    out: Option<&Path>,
) -> CliResult {
    let config = require_config(cli)?;
    let queries = load_queries(dataset)?;
    let backend_id = sampling.source_backend.as_ref().unwrap_or(&config.predictor);
    let backend = config.backend(backend_id)?;
    let (groups, stats) = collect_scored_groups(
        &queries,
        backend,
        sampling.k,
        &sampling.temps,
        config.pipeline.prediction_style,
        config.pipeline.workers,
    )?;
    let pairs = build_preference_pairs(&groups, max_pairs);
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out_dir.join("pairs.jsonl"));
    write_pairs_jsonl(&pairs, &out)?;
    println!(
        "truster data: {} queries, {} predictions sampled, {} pairs mined -> {}",
        stats.queries,
        stats.predictions_used,
        pairs.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train_truster(
    cli: &Cli,
    pairs_path: &Path,
    out: Option<&Path>,
    params: TrainParams,
    feature_config: FeatureConfig,
) -> CliResult {
    let pairs = read_pairs(pairs_path)?;
    let model = train(&pairs, &feature_config, &params)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out_dir.join("truster.json"));
    model.save(&out)?;
    println!(
        "trained truster on {} pairs: final train loss {:.6} -> {}",
        pairs.len(),
        model.training_meta.final_train_loss,
        out.display()
    );
    Ok(())
}

fn cmd_run(cli: &Cli, args: &DatasetArgs, require_gold: bool) -> CliResult {
    let mut config = require_config(cli)?;
    config.load_truster()?;
    let queries = load_queries(args)?;
    let comps = config.components()?;
    let trace_path = cli.out_dir.join("trace.jsonl");
    if require_gold {
        let report = evaluate(&queries, &config.pipeline, &comps)?;
        write_trace_jsonl(&report.traces, &trace_path)?;
        let report_path = cli.out_dir.join("report.json");
        write_report_json(&report, &report_path)?;
        println!(
            "n={} accuracy_initial={:.4} accuracy_after_refine={:.4} accuracy_final={:.4} \
             refine_rate={:.4} revert_rate={:.4}",
            report.n,
            report.accuracy_initial,
            report.accuracy_after_refine,
            report.accuracy_final,
            report.refine_rate,
            report.revert_rate
        );
        println!("report -> {}", report_path.display());
    } else {
        let traces = run_dataset(&queries, &config.pipeline, &comps)?;
        write_trace_jsonl(&traces, &trace_path)?;
        let report = assemble_report(traces);
        println!("n={} refine_rate={:.4} revert_rate={:.4}", report.n, report.refine_rate, report.revert_rate);
    }
    println!("trace -> {}", trace_path.display());
    Ok(())
}

fn cmd_sweep(
    cli: &Cli,
    dataset: &DatasetArgs,
    fractions: &[f64],
    order: SweepOrderArg,
) -> CliResult {
    let mut config = require_config(cli)?;
    config.load_truster()?;
    let queries = load_queries(dataset)?;
    let comps = config.components()?;
    let order = match order {
        SweepOrderArg::Ask => PipelineSweepOrder::Ask,
        SweepOrderArg::Random => PipelineSweepOrder::Random,
    };
    let curve =
        refinement_rate_sweep(&queries, &config.pipeline, &comps, fractions, order, cli.seed)?;
    let out = cli.out_dir.join("curve.csv");
    std::fs::write(&out, curve_to_csv(&curve))?;
    for (f, acc) in &curve {
        println!("fraction {f:.2}: accuracy {acc:.4}");
    }
    println!("curve -> {}", out.display());
    Ok(())
}

fn cmd_simulate(
    cli: &Cli,
    params_path: &Path,
    n: usize,
    fractions: Option<&[f64]>,
    trust_mode: TrustModeArg,
    order: SweepOrderArg,
) -> CliResult {
    let raw = std::fs::read_to_string(params_path)?;
    let params: CascadeParams = serde_json::from_str(&raw)?;
    params.validate()?;
    let mode = match trust_mode {
        TrustModeArg::NoTrust => TrustMode::NoTrust,
        TrustModeArg::WithTrust => TrustMode::WithTrust,
    };
    let stats = simulate(&params, n.max(1), cli.seed);
    println!(
        "expected accuracy: no_trust={:.6} with_trust={:.6}",
        expected_accuracy(&params, TrustMode::NoTrust),
        expected_accuracy(&params, TrustMode::WithTrust),
    );
    println!(
        "simulated (n={n}): accuracy={:.6} refine_rate={:.6} revert_rate={:.6}",
        stats.accuracy, stats.refine_rate, stats.revert_rate
    );
    if let Some(fractions) = fractions {
        let order = match order {
            SweepOrderArg::Ask => SweepOrder::AskOrdered,
            SweepOrderArg::Random => SweepOrder::Uniform,
        };
        let curve = sweep_fraction(&params, fractions, mode, order);
        let out = cli.out_dir.join("curve.csv");
        std::fs::write(&out, curve_to_csv(&curve))?;
        println!("curve -> {}", out.display());
    }
    Ok(())
}
