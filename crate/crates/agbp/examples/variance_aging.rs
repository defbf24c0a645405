//! Variance aging: an observation holds its base variance, grows by one of
//! three laws, then saturates at a ceiling. The example prints the schedules
//! and replays an aged observation through the dynamic runner.

use agbp::analysis::wls_solve;
use agbp::dynamics::{run_dynamic, AgingModel, GrowthKind, ObservationEvent};
use agbp::graph::{build_factor_graph, classify_factors};
use agbp::model::{
    contiguous_row_clusters, generate_model, GeneratorSpec, MatrixKind, VarianceScheme,
};
use agbp::scheduler::{RunConfig, Schedule};

fn main() {
    let models = [
        ("logarithmic", AgingModel::with_ceiling(GrowthKind::Logarithmic, 2.0, 0.5, 1.0, 0.0, 2.0, 6.0)),
        ("exponential", AgingModel::with_ceiling(GrowthKind::Exponential, 0.4, 1.0, 1.0, 0.0, 2.0, 6.0)),
        ("linear", AgingModel::with_ceiling(GrowthKind::Linear, 1.5, 0.0, 1.0, 0.0, 2.0, 6.0)),
    ];
    print!("{:>6}", "t");
    for (name, _) in &models {
        print!(" {name:>12}");
    }
    println!();
    for k in 0..9 {
        let t = k as f64;
        print!("{t:>6.1}");
        for (_, model) in &models {
            let model = model.as_ref().expect("aging model");
            print!(" {:>12.3}", model.variance_at(t).expect("variance"));
        }
        println!();
    }

    // One observation drifts while its variance ages along the linear law;
    // each event re-runs the warm scheduler against a freshly solved oracle.
    let spec = GeneratorSpec {
        cluster_count: 2,
        rows_per_cluster: 10,
        cols_per_cluster: 10,
        internal_edges: 30.0,
        tie_edges: 3.0,
        kind: MatrixKind::Symmetric,
        diagonal_increment: 1.0,
        variances: VarianceScheme::Uniform(1.0),
        seed: 5,
    };
    let (model, partition) = generate_model(&spec).expect("generation");
    let mut graph = build_factor_graph(&model).expect("graph");
    let rows = contiguous_row_clusters(spec.cluster_count, spec.rows_per_cluster);
    let classification = classify_factors(&graph, &partition, Some(&rows)).expect("classify");
    let aging = AgingModel::with_ceiling(GrowthKind::Linear, 1.5, 0.0, 1.0, 0.0, 2.0, 6.0)
        .expect("aging model");
    let z = graph.factor(0).observation;
    let events: Vec<ObservationEvent> = (3..7)
        .map(|k| ObservationEvent {
            time: k as f64,
            factor: 0,
            observation: z + 0.5 * (k - 2) as f64,
            variance: aging.variance_at(k as f64).expect("variance"),
        })
        .collect();
    let config = RunConfig {
        oracle: Some(wls_solve(&model).expect("oracle")),
        ..RunConfig::default()
    };
    let results = run_dynamic(&mut graph, &classification, &Schedule::new(1, 5), &config, &events)
        .expect("dynamic run");
    for (i, r) in results.iter().enumerate() {
        println!(
            "interval {i}: converged {} in {} sequences (factor 0 variance {:.3})",
            r.converged,
            r.sequences.unwrap(),
            if i == 0 { 1.0 } else { events[i - 1].variance }
        );
    }
}
