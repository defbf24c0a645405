//! Monte Carlo sweep harness: the timing metrics kappa and phi, per-trial
//! records and deterministic CSV emission.
//!
//! kappa is the largest per-cluster share of internal edges; phi rescales the
//! inter-cluster communication delay so that alternating and synchronous runs
//! can be compared on iteration counts alone. Sweeps are deterministic given
//! the base seed: trial seeds are a pure function of (base seed, generator
//! index, repetition index), and rows are emitted in (scenario, repetition)
//! order.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::wls_solve;
use crate::dynamics::AgingSpec;
use crate::engine::DampingConfig;
use crate::error::{Error, Result};
use crate::graph::{build_factor_graph, classify_factors, FactorClassification};
use crate::io::format_full;
use crate::model::{contiguous_row_clusters, generate_model, GeneratorSpec};
use crate::scheduler::{run_alternating, run_synchronous, RunConfig, RunResult, Schedule};

/// Largest per-cluster fraction of internal edges:
/// `kappa = max_i lambda_i / sum_j (lambda_j + gamma_j)`.
pub fn compute_kappa(classification: &FactorClassification) -> Result<f64> {
    kappa_from_counts(classification.internal_edges(), classification.tie_edges())
}

/// [`compute_kappa`] on raw per-cluster counts.
pub fn kappa_from_counts(internal: &[usize], tie: &[usize]) -> Result<f64> {
    let total: usize = internal.iter().sum::<usize>() + tie.iter().sum::<usize>();
    if total == 0 {
        return Err(Error::InvalidModel(
            "kappa is undefined on a graph without edges".into(),
        ));
    }
    let max_internal = internal.iter().copied().max().unwrap_or(0);
    let kappa = max_internal as f64 / total as f64;
    if internal.len() < 2 || kappa >= 1.0 {
        eprintln!(
            "warning: kappa = {kappa} is degenerate; the delay model assumes \
             multiple clusters with 0 < kappa < 1"
        );
    }
    Ok(kappa)
}

/// Scale factor `phi = (nu - kappa nu_s (nu_g + nu_l)) / (nu_s nu_g)`.
/// Negative values mean the alternating run can never beat the synchronous
/// one on this instance.
pub fn compute_scale_factor(nu: usize, nu_s: usize, nu_g: usize, nu_l: usize, kappa: f64) -> f64 {
    debug_assert!(nu_s >= 1 && nu_g >= 1);
    (nu as f64 - kappa * (nu_s * (nu_g + nu_l)) as f64) / ((nu_s * nu_g) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedGenerator {
    pub name: String,
    pub spec: GeneratorSpec,
}

fn default_repetitions() -> usize {
    500
}

fn default_tolerance() -> f64 {
    1e-5
}

/// Sweep configuration; one scenario per generator x schedule combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generators: Vec<NamedGenerator>,
    /// Grid of global iteration counts `nu_g`.
    pub globals: Vec<usize>,
    /// Grid of local iteration counts `nu_l`.
    pub locals: Vec<usize>,
    #[serde(default)]
    pub damping: Option<DampingConfig>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Observation perturbation probability `p_z` for dynamic experiments.
    #[serde(default)]
    pub perturbation: Option<f64>,
    #[serde(default)]
    pub aging: Vec<AgingSpec>,
    pub base_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.generators.is_empty() {
            return Err(Error::InvalidConfig("no generators given".into()));
        }
        for g in &self.generators {
            g.spec.validate()?;
        }
        if self.globals.is_empty() || self.globals.contains(&0) {
            return Err(Error::InvalidConfig(
                "globals grid must be non-empty with nu_g >= 1".into(),
            ));
        }
        if self.locals.is_empty() {
            return Err(Error::InvalidConfig("locals grid must be non-empty".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if let Some(d) = &self.damping {
            d.validate()?;
        }
        if let Some(p) = self.perturbation {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "perturbation probability must lie in [0, 1], got {p}"
                )));
            }
        }
        for a in &self.aging {
            a.build()?;
        }
        Ok(())
    }
}

/// One trial row of the sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub scenario: String,
    pub seed: u64,
    /// Synchronous iterations executed.
    pub nu: usize,
    /// Alternating sequences executed.
    pub nu_s: usize,
    pub nu_g: usize,
    pub nu_l: usize,
    pub kappa: f64,
    /// Present only when both runs converged.
    pub phi: Option<f64>,
    pub sync_converged: bool,
    pub agbp_converged: bool,
    pub rmse_sync: Option<f64>,
    pub rmse_agbp: Option<f64>,
}

/// Per-scenario aggregate; medians use the lower-median convention.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub trials: usize,
    pub sync_rate: f64,
    pub agbp_rate: f64,
    pub phi_median: Option<f64>,
    pub nu_median: Option<usize>,
    pub nu_s_median: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub trials: Vec<MetricRecord>,
    pub summaries: Vec<ScenarioSummary>,
}

/// Lower median: the element at rank `(n - 1) / 2` of the sorted values.
pub fn lower_median<T: Copy + PartialOrd>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("unordered median input"));
    Some(sorted[(sorted.len() - 1) / 2])
}

fn failed_record(
    scenario: &str,
    seed: u64,
    nu_g: usize,
    nu_l: usize,
    kappa: f64,
) -> MetricRecord {
    MetricRecord {
        scenario: scenario.to_string(),
        seed,
        nu: 0,
        nu_s: 0,
        nu_g,
        nu_l,
        kappa,
        phi: None,
        sync_converged: false,
        agbp_converged: false,
        rmse_sync: None,
        rmse_agbp: None,
    }
}

fn final_rmse(result: &RunResult) -> Option<f64> {
    result.rmse_history.last().copied()
}

/// Runs the full sweep. Individual trial failures (generation retries
/// exhausted, rank-deficient oracle) become non-converged rows; only config
/// errors abort.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let schedules: Vec<(usize, usize)> = config
        .globals
        .iter()
        .flat_map(|&g| config.locals.iter().map(move |&l| (g, l)))
        .collect();
    let scenario_name = |gen: &NamedGenerator, g: usize, l: usize| {
        format!("{}-g{}-l{}", gen.name, g, l)
    };

    // Buckets in scenario order: generator-major, then schedule.
    let mut buckets: Vec<Vec<MetricRecord>> =
        vec![Vec::new(); config.generators.len() * schedules.len()];

    for (g_idx, gen) in config.generators.iter().enumerate() {
        for rep in 0..config.repetitions {
            let seed = config
                .base_seed
                .wrapping_add((g_idx * config.repetitions + rep) as u64);
            let mut spec = gen.spec.clone();
            spec.seed = seed;
            let trial = prepare_trial(&spec, config);
            for (s_idx, &(nu_g, nu_l)) in schedules.iter().enumerate() {
                let scenario = scenario_name(gen, nu_g, nu_l);
                let bucket = &mut buckets[g_idx * schedules.len() + s_idx];
                match &trial {
                    Err(_) => bucket.push(failed_record(&scenario, seed, nu_g, nu_l, f64::NAN)),
                    Ok(t) => {
                        let schedule = Schedule::new(nu_g, nu_l);
                        match run_alternating(&t.graph, &t.classification, &schedule, &t.run_config)
                        {
                            Err(_) => bucket.push(failed_record(
                                &scenario, seed, nu_g, nu_l, t.kappa,
                            )),
                            Ok(agbp) => {
                                let nu_s = agbp.sequences.unwrap_or(0);
                                let phi = (t.sync.converged && agbp.converged && nu_s >= 1)
                                    .then(|| {
                                        compute_scale_factor(
                                            t.sync.iterations,
                                            nu_s,
                                            nu_g,
                                            nu_l,
                                            t.kappa,
                                        )
                                    });
                                bucket.push(MetricRecord {
                                    scenario,
                                    seed,
                                    nu: t.sync.iterations,
                                    nu_s,
                                    nu_g,
                                    nu_l,
                                    kappa: t.kappa,
                                    phi,
                                    sync_converged: t.sync.converged,
                                    agbp_converged: agbp.converged,
                                    rmse_sync: final_rmse(&t.sync),
                                    rmse_agbp: final_rmse(&agbp),
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    let summaries = buckets.iter().map(|b| summarize(b)).collect();
    Ok(SweepResult {
        trials: buckets.into_iter().flatten().collect(),
        summaries,
    })
}

struct PreparedTrial {
    graph: crate::graph::FactorGraph,
    classification: FactorClassification,
    kappa: f64,
    sync: RunResult,
    run_config: RunConfig,
}

fn prepare_trial(spec: &GeneratorSpec, config: &ExperimentConfig) -> Result<PreparedTrial> {
    let (model, partition) = generate_model(spec)?;
    let graph = build_factor_graph(&model)?;
    let row_clusters = contiguous_row_clusters(spec.cluster_count, spec.rows_per_cluster);
    let classification = classify_factors(&graph, &partition, Some(&row_clusters))?;
    let kappa = compute_kappa(&classification)?;
    let oracle = wls_solve(&model)?;
    let damping = config.damping.map(|mut d| {
        // Decorrelate masks across trials while staying deterministic.
        d.seed ^= spec.seed;
        d
    });
    let run_config = RunConfig {
        tolerance: config.tolerance,
        oracle: Some(oracle),
        damping,
        ..Default::default()
    };
    let sync = run_synchronous(&graph, &run_config)?;
    Ok(PreparedTrial {
        graph,
        classification,
        kappa,
        sync,
        run_config,
    })
}

fn summarize(records: &[MetricRecord]) -> ScenarioSummary {
    let trials = records.len();
    let sync_ok = records.iter().filter(|r| r.sync_converged).count();
    let agbp_ok = records.iter().filter(|r| r.agbp_converged).count();
    let phis: Vec<f64> = records.iter().filter_map(|r| r.phi).collect();
    let nus: Vec<usize> = records
        .iter()
        .filter(|r| r.sync_converged)
        .map(|r| r.nu)
        .collect();
    let nu_ss: Vec<usize> = records
        .iter()
        .filter(|r| r.agbp_converged)
        .map(|r| r.nu_s)
        .collect();
    ScenarioSummary {
        scenario: records.first().map(|r| r.scenario.clone()).unwrap_or_default(),
        trials,
        sync_rate: sync_ok as f64 / trials.max(1) as f64,
        agbp_rate: agbp_ok as f64 / trials.max(1) as f64,
        phi_median: lower_median(&phis),
        nu_median: lower_median(&nus),
        nu_s_median: lower_median(&nu_ss),
    }
}

pub const TRIALS_HEADER: &str =
    "scenario,seed,nu,nu_s,nu_g,nu_l,kappa,phi,sync_converged,agbp_converged,rmse_sync,rmse_agbp";

fn opt_full(x: Option<f64>) -> String {
    x.map(format_full).unwrap_or_default()
}

pub fn trials_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from(TRIALS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.scenario,
            r.seed,
            r.nu,
            r.nu_s,
            r.nu_g,
            r.nu_l,
            format_full(r.kappa),
            opt_full(r.phi),
            r.sync_converged,
            r.agbp_converged,
            opt_full(r.rmse_sync),
            opt_full(r.rmse_agbp),
        ));
    }
    out
}

pub fn summary_csv(summaries: &[ScenarioSummary]) -> String {
    let mut out = String::from(
        "# medians use the lower-median convention: rank (n - 1) / 2 of the sorted values\n\
         scenario,trials,sync_rate,agbp_rate,phi_median,nu_median,nu_s_median\n",
    );
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.scenario,
            s.trials,
            format_full(s.sync_rate),
            format_full(s.agbp_rate),
            opt_full(s.phi_median),
            s.nu_median.map(|v| v.to_string()).unwrap_or_default(),
            s.nu_s_median.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    out
}

/// Writes `trials.csv` and `summary.csv` into `dir`, creating it if needed.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trials_path = dir.join("trials.csv");
    let summary_path = dir.join("summary.csv");
    let mut f = fs::File::create(&trials_path).map_err(io_err(&trials_path))?;
    f.write_all(trials_csv(&result.trials).as_bytes())
        .map_err(io_err(&trials_path))?;
    let mut f = fs::File::create(&summary_path).map_err(io_err(&summary_path))?;
    f.write_all(summary_csv(&result.summaries).as_bytes())
        .map_err(io_err(&summary_path))?;
    Ok((trials_path, summary_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MatrixKind, VarianceScheme};

    #[test]
    fn kappa_examples() {
        let k = kappa_from_counts(&[600, 600], &[5, 5]).unwrap();
        assert!((k - 600.0 / 1210.0).abs() < 1e-12);
        assert!((k - 0.495868).abs() < 1e-6);

        let k = kappa_from_counts(&[900, 300], &[0, 0]).unwrap();
        assert_eq!(k, 0.75);

        // Degenerate single cluster hits the boundary.
        assert_eq!(kappa_from_counts(&[10], &[0]).unwrap(), 1.0);
        assert!(kappa_from_counts(&[0, 0], &[0, 0]).is_err());
    }

    #[test]
    fn scale_factor_examples() {
        assert_eq!(compute_scale_factor(1000, 10, 1, 9, 0.5), 95.0);
        assert_eq!(compute_scale_factor(100, 50, 2, 0, 0.5), 0.5);
        // nu exactly kappa nu_s (nu_g + nu_l) gives zero.
        assert_eq!(compute_scale_factor(50, 10, 1, 9, 0.5), 0.0);
        // Negative phi is allowed.
        assert!(compute_scale_factor(10, 10, 1, 9, 0.5) < 0.0);
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(lower_median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median::<f64>(&[]), None);
        assert_eq!(lower_median(&[7.0]), Some(7.0));
    }

    fn tiny_config(reps: usize) -> ExperimentConfig {
        ExperimentConfig {
            generators: vec![NamedGenerator {
                name: "tiny".into(),
                spec: GeneratorSpec {
                    cluster_count: 2,
                    rows_per_cluster: 8,
                    cols_per_cluster: 8,
                    internal_edges: 20.0,
                    tie_edges: 4.0,
                    kind: MatrixKind::Symmetric,
                    diagonal_increment: 1.0,
                    variances: VarianceScheme::Uniform(0.1),
                    seed: 0,
                },
            }],
            globals: vec![1],
            locals: vec![2],
            damping: None,
            repetitions: reps,
            tolerance: 1e-5,
            perturbation: None,
            aging: Vec::new(),
            base_seed: 42,
            output_dir: None,
        }
    }

    #[test]
    fn sweep_is_deterministic_and_phi_recomputable() {
        let config = tiny_config(3);
        let a = run_sweep(&config).unwrap();
        let b = run_sweep(&config).unwrap();
        assert_eq!(trials_csv(&a.trials), trials_csv(&b.trials));
        assert_eq!(summary_csv(&a.summaries), summary_csv(&b.summaries));
        assert_eq!(a.trials.len(), 3);

        for r in &a.trials {
            if let Some(phi) = r.phi {
                let again = compute_scale_factor(r.nu, r.nu_s, r.nu_g, r.nu_l, r.kappa);
                assert_eq!(phi.to_bits(), again.to_bits());
            }
        }
    }

    #[test]
    fn single_repetition_medians_equal_values() {
        let config = tiny_config(1);
        let result = run_sweep(&config).unwrap();
        assert_eq!(result.trials.len(), 1);
        let r = &result.trials[0];
        let s = &result.summaries[0];
        assert_eq!(s.trials, 1);
        if r.sync_converged {
            assert_eq!(s.nu_median, Some(r.nu));
        }
        if r.agbp_converged {
            assert_eq!(s.nu_s_median, Some(r.nu_s));
        }
        assert_eq!(s.phi_median, r.phi);
    }

    #[test]
    fn sweep_csv_round_trips_to_files() {
        let config = tiny_config(2);
        let result = run_sweep(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (trials, summary) = write_sweep(&result, dir.path()).unwrap();
        let trials_text = std::fs::read_to_string(trials).unwrap();
        assert!(trials_text.starts_with(TRIALS_HEADER));
        assert_eq!(trials_text.lines().count(), 3);
        let summary_text = std::fs::read_to_string(summary).unwrap();
        assert!(summary_text.contains("lower-median"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = tiny_config(1);
        c.repetitions = 0;
        assert!(c.validate().is_err());
        let mut c = tiny_config(1);
        c.globals = vec![0];
        assert!(c.validate().is_err());
        let mut c = tiny_config(1);
        c.tolerance = 0.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config(1);
        c.perturbation = Some(1.5);
        assert!(c.validate().is_err());
    }
}
