//! Runs synchronous GBP and the alternating scheduler on the same instance
//! and compares iteration counts, the delay proxy kappa and the scale factor
//! phi that decides which scheduler delivers its estimate first.

use agbp::analysis::wls_solve;
use agbp::experiment::{compute_kappa, compute_scale_factor};
use agbp::graph::{build_factor_graph, classify_factors};
use agbp::model::{
    contiguous_row_clusters, generate_model, GeneratorSpec, MatrixKind, VarianceScheme,
};
use agbp::scheduler::{rmse, run_alternating, run_synchronous, RunConfig, Schedule};

fn main() {
    let spec = GeneratorSpec {
        cluster_count: 2,
        rows_per_cluster: 20,
        cols_per_cluster: 20,
        internal_edges: 120.0,
        tie_edges: 5.0,
        kind: MatrixKind::Symmetric,
        diagonal_increment: 0.01,
        variances: VarianceScheme::Uniform(1.0),
        seed: 11,
    };
    let (model, partition) = generate_model(&spec).expect("generation");
    let graph = build_factor_graph(&model).expect("graph");
    let rows = contiguous_row_clusters(spec.cluster_count, spec.rows_per_cluster);
    let classification = classify_factors(&graph, &partition, Some(&rows)).expect("classify");
    let oracle = wls_solve(&model).expect("oracle");

    let config = RunConfig {
        oracle: Some(oracle.clone()),
        ..RunConfig::default()
    };
    let sync = run_synchronous(&graph, &config).expect("synchronous");
    println!(
        "synchronous: converged {} after nu = {} iterations, rmse {:.2e}",
        sync.converged,
        sync.iterations,
        rmse(&sync.estimate, &oracle).unwrap()
    );

    let kappa = compute_kappa(&classification).expect("kappa");
    for nu_l in [1usize, 5, 30] {
        let schedule = Schedule::new(1, nu_l);
        let alt = run_alternating(&graph, &classification, &schedule, &config).expect("alternating");
        let nu_s = alt.sequences.unwrap();
        let phi = compute_scale_factor(sync.iterations, nu_s, 1, nu_l, kappa);
        println!(
            "alternating nu_l = {nu_l:>2}: converged {} after nu_s = {nu_s} sequences \
             ({} iterations), phi = {phi:.2}",
            alt.converged, alt.iterations
        );
    }
    println!("kappa = {kappa:.3}; the alternating run wins whenever the inter-cluster");
    println!("delay exceeds phi times the intra-cluster delay");
}
