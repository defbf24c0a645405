//! Converges once, perturbs a tenth of the observations, then compares a warm
//! restart from the live message state against a cold start on the updated
//! problem. The warm run reuses everything the perturbation left intact.

use agbp::analysis::wls_solve;
use agbp::dynamics::{model_of_graph, perturb_observations};
use agbp::graph::{build_factor_graph, classify_factors};
use agbp::model::{
    contiguous_row_clusters, generate_model, GeneratorSpec, MatrixKind, VarianceScheme,
};
use agbp::scheduler::{resume_alternating, run_alternating, RunConfig, Schedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let schedule = Schedule::new(1, 5);
    let mut wins = 0;
    let seeds = 10u64;
    for seed in 0..seeds {
        let spec = GeneratorSpec {
            cluster_count: 2,
            rows_per_cluster: 20,
            cols_per_cluster: 20,
            internal_edges: 120.0,
            tie_edges: 5.0,
            kind: MatrixKind::Symmetric,
            diagonal_increment: 0.01,
            variances: VarianceScheme::Uniform(1.0),
            seed,
        };
        let (model, partition) = generate_model(&spec).expect("generation");
        let mut graph = build_factor_graph(&model).expect("graph");
        let rows = contiguous_row_clusters(spec.cluster_count, spec.rows_per_cluster);
        let classification = classify_factors(&graph, &partition, Some(&rows)).expect("classify");

        let config = RunConfig {
            oracle: Some(wls_solve(&model).expect("oracle")),
            ..RunConfig::default()
        };
        let cold = run_alternating(&graph, &classification, &schedule, &config).expect("cold");
        assert!(cold.converged);

        let mut state = cold.final_state.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFEED);
        let changed =
            perturb_observations(&mut graph, &mut state, 0.1, &mut rng).expect("perturb");

        let updated = RunConfig {
            oracle: Some(wls_solve(&model_of_graph(&graph).expect("model")).expect("oracle")),
            ..config
        };
        let warm = resume_alternating(&graph, &classification, &schedule, &updated, state)
            .expect("warm");
        let restart =
            run_alternating(&graph, &classification, &schedule, &updated).expect("restart");
        println!(
            "seed {seed}: {} observations changed, warm nu_s = {}, cold nu_s = {}",
            changed.len(),
            warm.sequences.unwrap(),
            restart.sequences.unwrap()
        );
        if warm.sequences <= restart.sequences {
            wins += 1;
        }
    }
    println!("warm restart needed no more sequences on {wins}/{seeds} seeds");
}
