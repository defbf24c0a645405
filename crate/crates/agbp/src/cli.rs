//! Command-line surface: `generate`, `run`, `sweep`, `analyze`, `dynamic`.
//!
//! Every subcommand takes `--config <path>` (JSON) plus the shared overrides
//! `--seed`, `--out`, `--tol` and `--quiet`. Exit codes: 0 success, 1 config
//! error (bad flags, unreadable or invalid config), 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{analyze, fixed_point_means, spectral_radius, wls_solve};
use crate::dynamics::{model_of_graph, run_dynamic, AgingSpec, ObservationEvent};
use crate::engine::DampingConfig;
use crate::error::Error;
use crate::experiment::{compute_kappa, run_sweep, write_sweep, ExperimentConfig};
use crate::graph::{build_factor_graph, classify_factors, FactorGraph};
use crate::io::{load_model, load_partition, save_model, save_partition};
use crate::model::{
    contiguous_row_clusters, generate_model, ClusterPartition, GeneratorSpec, LinearModel,
};
use crate::scheduler::{run_alternating, run_synchronous, RunConfig, RunResult, Schedule};

#[derive(Parser)]
#[command(name = "agbp", version, about = "Gaussian belief propagation on clustered factor graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance and write its model files.
    Generate(CommonArgs),
    /// Run one model to convergence and print a summary.
    Run(CommonArgs),
    /// Monte Carlo sweep over generators and schedules, emitting CSV tables.
    Sweep(CommonArgs),
    /// Spectral report: recursion dimension and spectral radius.
    Analyze(CommonArgs),
    /// Replay an observation event stream with warm restarts.
    Dynamic(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the convergence tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Suppress informational output.
    #[arg(long)]
    quiet: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Dynamic(args) => cmd_dynamic(&args),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("invalid config {}: {e}", path.display())))
}

fn emit(quiet: bool, value: &serde_json::Value) {
    if !quiet {
        println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
    }
}

// generate

fn cmd_generate(args: &CommonArgs) -> Result<(), Failure> {
    let mut spec: GeneratorSpec = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let (model, partition) = generate_model(&spec).map_err(runtime)?;

    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let matrix = dir.join("matrix.mtx");
    let observations = dir.join("observations.csv");
    let partition_path = dir.join("partition.csv");
    save_model(&model, &matrix, &observations).map_err(runtime)?;
    save_partition(&partition, &partition_path).map_err(runtime)?;

    emit(
        args.quiet,
        &json!({
            "matrix": matrix,
            "observations": observations,
            "partition": partition_path,
            "rows": model.rows(),
            "cols": model.cols(),
            "seed": spec.seed,
        }),
    );
    Ok(())
}

// run

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunCommandConfig {
    matrix: PathBuf,
    observations: PathBuf,
    #[serde(default)]
    partition: Option<PathBuf>,
    /// Alternating schedule; absent means plain synchronous GBP.
    #[serde(default)]
    schedule: Option<Schedule>,
    #[serde(default)]
    damping: Option<DampingConfig>,
    #[serde(default)]
    tolerance: Option<f64>,
    #[serde(default)]
    max_iterations: Option<usize>,
    #[serde(default)]
    max_sequences: Option<usize>,
    /// Judge convergence against the dense WLS estimate (default true).
    #[serde(default = "default_true")]
    oracle: bool,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_true() -> bool {
    true
}

struct LoadedProblem {
    model: LinearModel,
    graph: FactorGraph,
    partition: Option<ClusterPartition>,
}

fn load_problem(
    matrix: &Path,
    observations: &Path,
    partition: Option<&Path>,
) -> Result<LoadedProblem, Failure> {
    let model = load_model(matrix, observations).map_err(runtime)?;
    let graph = build_factor_graph(&model).map_err(runtime)?;
    let partition = partition
        .map(load_partition)
        .transpose()
        .map_err(runtime)?;
    Ok(LoadedProblem {
        model,
        graph,
        partition,
    })
}

fn build_run_config(
    cfg: &RunCommandConfig,
    args: &CommonArgs,
    model: &LinearModel,
) -> Result<RunConfig, Failure> {
    let mut run_config = RunConfig::default();
    if let Some(t) = args.tol.or(cfg.tolerance) {
        run_config.tolerance = t;
    }
    if let Some(m) = cfg.max_iterations {
        run_config.max_iterations = m;
    }
    if let Some(m) = cfg.max_sequences {
        run_config.max_sequences = m;
    }
    if let Some(mut d) = cfg.damping {
        if let Some(seed) = args.seed.or(cfg.seed) {
            d.seed = seed;
        }
        d.validate().map_err(|e| Failure::Config(e.to_string()))?;
        run_config.damping = Some(d);
    }
    if cfg.oracle {
        run_config.oracle = Some(wls_solve(model).map_err(runtime)?);
    }
    Ok(run_config)
}

fn summary_json(mode: &str, result: &RunResult, schedule: Option<&Schedule>) -> serde_json::Value {
    json!({
        "mode": mode,
        "converged": result.converged,
        "diverged": result.diverged,
        "nu": result.iterations,
        "nu_s": result.sequences,
        "nu_g": schedule.map(|s| s.globals),
        "nu_l": schedule.map(|s| s.locals),
        "rmse_final": result.rmse_history.last(),
        "residual_final": result.residual_history.last(),
    })
}

fn write_or_print(
    quiet: bool,
    out: Option<&Path>,
    name: &str,
    value: &serde_json::Value,
) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
            let path = dir.join(name);
            let text = serde_json::to_string_pretty(value).expect("serializable");
            fs::write(&path, text)
                .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
            emit(quiet, &json!({ "written": path }));
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(value).expect("serializable")
        ),
    }
    Ok(())
}

fn cmd_run(args: &CommonArgs) -> Result<(), Failure> {
    let cfg: RunCommandConfig = read_config(&args.config)?;
    let problem = load_problem(&cfg.matrix, &cfg.observations, cfg.partition.as_deref())?;
    let run_config = build_run_config(&cfg, args, &problem.model)?;

    let summary = match &cfg.schedule {
        None => {
            let result = run_synchronous(&problem.graph, &run_config).map_err(runtime)?;
            summary_json("synchronous", &result, None)
        }
        Some(schedule) => {
            let partition = problem.partition.as_ref().ok_or_else(|| {
                Failure::Config("alternating schedule needs a partition file".into())
            })?;
            let classification =
                classify_factors(&problem.graph, partition, None).map_err(runtime)?;
            let result = run_alternating(&problem.graph, &classification, schedule, &run_config)
                .map_err(runtime)?;
            summary_json("alternating", &result, Some(schedule))
        }
    };
    write_or_print(args.quiet, args.out.as_deref(), "summary.json", &summary)
}

// sweep

fn cmd_sweep(args: &CommonArgs) -> Result<(), Failure> {
    let mut cfg: ExperimentConfig = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(t) = args.tol {
        cfg.tolerance = t;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("sweep"));
    let result = run_sweep(&cfg).map_err(runtime)?;
    let (trials, summary) = write_sweep(&result, &dir).map_err(runtime)?;
    emit(args.quiet, &json!({ "trials": trials, "summary": summary }));
    Ok(())
}

// analyze

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnalyzeConfig {
    #[serde(default)]
    generator: Option<GeneratorSpec>,
    #[serde(default)]
    matrix: Option<PathBuf>,
    #[serde(default)]
    observations: Option<PathBuf>,
    #[serde(default)]
    partition: Option<PathBuf>,
}

fn cmd_analyze(args: &CommonArgs) -> Result<(), Failure> {
    let cfg: AnalyzeConfig = read_config(&args.config)?;
    let (graph, partition, row_clusters) = match (&cfg.generator, &cfg.matrix, &cfg.observations) {
        (Some(spec), None, None) => {
            let mut spec = spec.clone();
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let (model, partition) = generate_model(&spec).map_err(runtime)?;
            let rows = contiguous_row_clusters(spec.cluster_count, spec.rows_per_cluster);
            (build_factor_graph(&model).map_err(runtime)?, Some(partition), Some(rows))
        }
        (None, Some(matrix), Some(observations)) => {
            let problem = load_problem(matrix, observations, cfg.partition.as_deref())?;
            (problem.graph, problem.partition, None)
        }
        _ => {
            return Err(Failure::Config(
                "give either a generator spec or matrix + observations paths".into(),
            ))
        }
    };

    let decomposition = analyze(&graph).map_err(runtime)?;
    let rho = spectral_radius(&decomposition.omega);
    let fixed_point_ok = rho < 1.0 && fixed_point_means(&decomposition).is_ok();
    let kappa = partition
        .as_ref()
        .map(|p| {
            let classification =
                classify_factors(&graph, p, row_clusters.as_deref()).map_err(runtime)?;
            compute_kappa(&classification).map_err(runtime)
        })
        .transpose()?;

    let report = json!({
        "variables": graph.variable_count(),
        "factors": graph.factor_count(),
        "dimension": decomposition.dimension(),
        "rho": rho,
        "predicts_convergence": rho < 1.0,
        "fixed_point_solvable": fixed_point_ok,
        "kappa": kappa,
    });
    write_or_print(args.quiet, args.out.as_deref(), "analysis.json", &report)
}

// dynamic

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DynamicConfig {
    matrix: PathBuf,
    observations: PathBuf,
    partition: PathBuf,
    schedule: Schedule,
    /// Event stream CSV `time,factor,z,v`.
    events: PathBuf,
    #[serde(default)]
    damping: Option<DampingConfig>,
    #[serde(default)]
    tolerance: Option<f64>,
    /// Aging models generating additional variance-update events: each entry
    /// emits one event per listed time with the factor's current observation.
    #[serde(default)]
    aging: Vec<FactorAging>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FactorAging {
    factor: usize,
    model: AgingSpec,
    times: Vec<f64>,
}

fn parse_events(path: &Path) -> Result<Vec<ObservationEvent>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("cannot read events {}: {e}", path.display())))?;
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("time")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = |msg: String| {
            Failure::Runtime(format!(
                "bad event at {}:{}: {msg}",
                path.display(),
                idx + 1
            ))
        };
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, got {}", fields.len())));
        }
        events.push(ObservationEvent {
            time: fields[0].parse().map_err(|e| parse_err(format!("time: {e}")))?,
            factor: fields[1].parse().map_err(|e| parse_err(format!("factor: {e}")))?,
            observation: fields[2].parse().map_err(|e| parse_err(format!("z: {e}")))?,
            variance: fields[3].parse().map_err(|e| parse_err(format!("v: {e}")))?,
        });
    }
    Ok(events)
}

fn cmd_dynamic(args: &CommonArgs) -> Result<(), Failure> {
    let cfg: DynamicConfig = read_config(&args.config)?;
    let problem = load_problem(&cfg.matrix, &cfg.observations, Some(&cfg.partition))?;
    let mut graph = problem.graph;
    let partition = problem.partition.expect("partition loaded");
    let classification = classify_factors(&graph, &partition, None).map_err(runtime)?;

    let mut events = parse_events(&cfg.events)?;
    for entry in &cfg.aging {
        let model = entry
            .model
            .build()
            .map_err(|e| Failure::Config(e.to_string()))?;
        if entry.factor >= graph.factor_count() {
            return Err(Failure::Config(format!(
                "aging entry names unknown factor {}",
                entry.factor
            )));
        }
        let z = graph.factor(entry.factor).observation;
        for &t in &entry.times {
            let v = model.variance_at(t).map_err(runtime)?;
            events.push(ObservationEvent {
                time: t,
                factor: entry.factor,
                observation: z,
                variance: v,
            });
        }
    }
    events.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("finite event times"));

    let mut run_config = RunConfig {
        oracle: Some(wls_solve(&problem.model).map_err(runtime)?),
        ..Default::default()
    };
    if let Some(t) = args.tol.or(cfg.tolerance) {
        run_config.tolerance = t;
    }
    if let Some(mut d) = cfg.damping {
        if let Some(seed) = args.seed {
            d.seed = seed;
        }
        d.validate().map_err(|e| Failure::Config(e.to_string()))?;
        run_config.damping = Some(d);
    }

    let results = run_dynamic(&mut graph, &classification, &cfg.schedule, &run_config, &events)
        .map_err(runtime)?;
    let intervals: Vec<serde_json::Value> = results
        .iter()
        .map(|r| summary_json("alternating", r, Some(&cfg.schedule)))
        .collect();
    let final_model = model_of_graph(&graph).map_err(runtime)?;
    let report = json!({
        "intervals": intervals,
        "events": events.len(),
        "final_observation_count": final_model.rows(),
    });
    write_or_print(args.quiet, args.out.as_deref(), "dynamic.json", &report)
}
