//! Monte Carlo sweep over a schedule grid: every repetition runs both
//! schedulers, records nu, nu_s, kappa and phi, and the per-scenario summary
//! reports convergence rates and lower medians. Output lands in two CSV
//! files whose phi column is bit-recomputable from the other columns.

use agbp::experiment::{run_sweep, write_sweep, ExperimentConfig, NamedGenerator};
use agbp::model::{GeneratorSpec, MatrixKind, VarianceScheme};

fn main() {
    let config = ExperimentConfig {
        generators: vec![NamedGenerator {
            name: "baseline".into(),
            spec: GeneratorSpec {
                cluster_count: 2,
                rows_per_cluster: 20,
                cols_per_cluster: 20,
                internal_edges: 120.0,
                tie_edges: 5.0,
                kind: MatrixKind::Symmetric,
                diagonal_increment: 0.01,
                variances: VarianceScheme::Uniform(1.0),
                seed: 0,
            },
        }],
        globals: vec![1],
        locals: vec![1, 5, 30],
        damping: None,
        repetitions: 20,
        tolerance: 1e-5,
        perturbation: None,
        aging: Vec::new(),
        base_seed: 42,
        output_dir: None,
    };
    let result = run_sweep(&config).expect("sweep");

    println!(
        "{:<18} {:>7} {:>10} {:>10} {:>10} {:>8} {:>8}",
        "scenario", "trials", "sync_rate", "agbp_rate", "phi_med", "nu_med", "nu_s_med"
    );
    for s in &result.summaries {
        println!(
            "{:<18} {:>7} {:>10.2} {:>10.2} {:>10.2} {:>8} {:>8}",
            s.scenario,
            s.trials,
            s.sync_rate,
            s.agbp_rate,
            s.phi_median.unwrap_or(f64::NAN),
            s.nu_median.map(|v| v.to_string()).unwrap_or_default(),
            s.nu_s_median.map(|v| v.to_string()).unwrap_or_default(),
        );
    }

    let dir = std::env::temp_dir().join("agbp_parameter_sweep");
    let (trials, summary) = write_sweep(&result, &dir).expect("write");
    println!("wrote {}", trials.display());
    println!("wrote {}", summary.display());
}
