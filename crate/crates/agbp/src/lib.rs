//! Gaussian belief propagation over sparse linear models on clustered factor
//! graphs.
//!
//! The crate solves `z = Hx + noise` in the maximum-likelihood sense by
//! message passing: factor nodes are rows of `H`, variable nodes its columns.
//! Besides the plain synchronous schedule it implements an alternating
//! scheduler that interleaves global iterations with cluster-local iterations
//! (tie factors frozen as leaves), randomized damping of mean messages,
//! variance aging for streaming observations, a dense weighted-least-squares
//! oracle, and a spectral view (`Omega`, `c_f`) of the mean recursion whose
//! radius decides convergence.
//!
//! Start with the `examples/` directory: each file is a runnable walkthrough
//! of one capability. The `agbp` binary exposes the same machinery as
//! `generate`, `run`, `sweep`, `analyze` and `dynamic` subcommands.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod model;
pub mod scheduler;

pub use analysis::{
    analyze, fixed_point_means, solve_variance_fixed_point, spectral_radius, wls_solve,
    SpectralDecomposition,
};
pub use dynamics::{
    apply_event, perturb_observations, run_dynamic, AgingModel, GrowthKind, ObservationEvent,
};
pub use engine::{
    compute_marginals, init_messages, DampingConfig, DampingState, IterationStats, MessageState,
};
pub use error::{Error, Result};
pub use experiment::{
    compute_kappa, compute_scale_factor, run_sweep, write_sweep, ExperimentConfig, MetricRecord,
};
pub use graph::{
    build_factor_graph, classify_factors, freeze_tie_factors, Factor, FactorClassification,
    FactorGraph, FreezeView,
};
pub use model::{
    assemble_global, generate_model, ClusterPartition, GeneratorSpec, LinearModel, MatrixKind,
    VarianceScheme,
};
pub use scheduler::{
    resume_alternating, run_alternating, run_synchronous, RunConfig, RunResult, Schedule,
};
