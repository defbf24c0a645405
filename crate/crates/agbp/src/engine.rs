//! Message updates, marginals and randomized damping.
//!
//! All updates follow Jacobi semantics: within a half-iteration every message
//! is a pure function of the previous snapshot, so results are independent of
//! traversal order. Variances are never damped. Leaf factors emit constant
//! messages `(z/h, v/h^2)` fixed at initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Factor, FactorGraph, FreezeView};

/// The full set of directed mean/variance messages of one run.
///
/// Messages are stored per edge slot of the graph; `x2f` entries are undefined
/// until the first half-iteration has executed.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    f2x_mean: Vec<f64>,
    f2x_var: Vec<f64>,
    x2f_mean: Vec<f64>,
    x2f_var: Vec<f64>,
    x2f_ready: bool,
    iteration: usize,
    scratch_mean: Vec<f64>,
    scratch_var: Vec<f64>,
}

impl MessageState {
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Mean/variance of the factor-to-variable message on `edge`.
    pub fn factor_to_variable(&self, edge: usize) -> (f64, f64) {
        (self.f2x_mean[edge], self.f2x_var[edge])
    }

    /// Mean/variance of the variable-to-factor message on `edge`.
    /// Valid after the first half-iteration.
    pub fn variable_to_factor(&self, edge: usize) -> (f64, f64) {
        debug_assert!(self.x2f_ready, "x2f messages not computed yet");
        (self.x2f_mean[edge], self.x2f_var[edge])
    }

    pub fn x2f_ready(&self) -> bool {
        self.x2f_ready
    }

    pub fn f2x_means(&self) -> &[f64] {
        &self.f2x_mean
    }

    pub fn f2x_variances(&self) -> &[f64] {
        &self.f2x_var
    }

    /// Overrides one factor-to-variable message; used for pinned-variance
    /// evaluations and warm starts.
    pub fn set_factor_to_variable(&mut self, edge: usize, mean: f64, variance: f64) {
        self.f2x_mean[edge] = mean;
        self.f2x_var[edge] = variance;
    }

    pub fn set_variable_to_factor(&mut self, edge: usize, mean: f64, variance: f64) {
        self.x2f_mean[edge] = mean;
        self.x2f_var[edge] = variance;
        self.x2f_ready = true;
    }
}

/// Progress report of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    /// Max absolute change of a branch factor-to-variable mean.
    pub max_mean_delta: f64,
    /// Max absolute branch factor-to-variable mean after the iteration.
    pub max_abs_mean: f64,
    pub non_finite: bool,
}

/// Constant message of a leaf factor: mean `z/h`, variance `v/h^2`.
pub fn leaf_message(factor: &Factor) -> (f64, f64) {
    debug_assert_eq!(factor.degree(), 1);
    let (_, h) = factor.coefficients[0];
    (factor.observation / h, factor.variance / (h * h))
}

/// Initializes messages: branch factor-to-variable messages take the prior,
/// leaves their constant value. Variable-to-factor messages stay empty until
/// the first half-iteration.
pub fn init_messages(
    graph: &FactorGraph,
    prior_mean: f64,
    prior_variance: f64,
) -> Result<MessageState> {
    if !(prior_variance > 0.0) || !prior_variance.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "prior variance must be positive and finite, got {prior_variance}"
        )));
    }
    let ne = graph.edges().len();
    let mut f2x_mean = vec![0.0; ne];
    let mut f2x_var = vec![0.0; ne];
    for (f, factor) in graph.factors().iter().enumerate() {
        if factor.is_leaf() {
            let e = graph.factor_edge_ids(f).start;
            let (m, v) = leaf_message(factor);
            f2x_mean[e] = m;
            f2x_var[e] = v;
        } else {
            for e in graph.factor_edge_ids(f) {
                f2x_mean[e] = prior_mean;
                f2x_var[e] = prior_variance;
            }
        }
    }
    Ok(MessageState {
        f2x_mean,
        f2x_var,
        x2f_mean: vec![0.0; ne],
        x2f_var: vec![0.0; ne],
        x2f_ready: false,
        iteration: 0,
        scratch_mean: vec![0.0; ne],
        scratch_var: vec![0.0; ne],
    })
}

/// Re-seeds the constant message of a leaf factor after its observation
/// changed (dynamic mode); branch messages are left warm.
pub fn refresh_leaf_message(graph: &FactorGraph, state: &mut MessageState, factor: usize) {
    let fac = graph.factor(factor);
    if fac.is_leaf() {
        let e = graph.factor_edge_ids(factor).start;
        let (m, v) = leaf_message(fac);
        state.f2x_mean[e] = m;
        state.f2x_var[e] = v;
    }
}

/// Variable-to-factor message on edge `(x_j -> f_i)`:
/// `1/v = sum_{f_a != f_i} 1/v_{f_a->x_j}`, `m = v * sum m/v`.
/// The variable's virtual anchor, when present, joins the product.
pub fn variable_to_factor(
    graph: &FactorGraph,
    state: &MessageState,
    variable: usize,
    factor: usize,
) -> Result<(f64, f64)> {
    let mut inv_sum = 0.0;
    let mut weighted = 0.0;
    let mut any = false;
    if let Some((m, v)) = graph.anchor(variable) {
        inv_sum += 1.0 / v;
        weighted += m / v;
    }
    for &e in graph.variable_edge_ids(variable) {
        if graph.edges()[e].factor == factor {
            continue;
        }
        let (m, v) = state.factor_to_variable(e);
        inv_sum += 1.0 / v;
        weighted += m / v;
        any = true;
    }
    if !any {
        return Err(Error::UnderdeterminedVariable(variable));
    }
    let v = 1.0 / inv_sum;
    Ok((v * weighted, v))
}

/// Factor-to-variable message on edge `(f_i -> x_j)` of a branch factor:
/// `m = (z - sum h_b m_b) / h_j`, `v = (v_i + sum h_b^2 v_b) / h_j^2`.
pub fn factor_to_variable(
    graph: &FactorGraph,
    state: &MessageState,
    factor: usize,
    variable: usize,
) -> (f64, f64) {
    let fac = graph.factor(factor);
    let mut mean_sum = 0.0;
    let mut var_sum = 0.0;
    let mut h_j = 0.0;
    for e in graph.factor_edge_ids(factor) {
        let edge = graph.edges()[e];
        if edge.variable == variable {
            h_j = edge.coefficient;
            continue;
        }
        let (m, v) = state.variable_to_factor(e);
        mean_sum += edge.coefficient * m;
        var_sum += edge.coefficient * edge.coefficient * v;
    }
    (
        (fac.observation - mean_sum) / h_j,
        (fac.variance + var_sum) / (h_j * h_j),
    )
}

/// Randomized damping configuration (mean messages only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingConfig {
    /// Weight of the previous-iteration mean on damped edges.
    pub weight: f64,
    /// Probability that an edge is damped.
    pub probability: f64,
    pub seed: u64,
    /// When true the Bernoulli mask is redrawn every iteration; the default
    /// holds one mask for the whole run.
    #[serde(default)]
    pub resample_each_iteration: bool,
}

impl DampingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "damping weight must lie in (0, 1), got {}",
                self.weight
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidConfig(format!(
                "damping probability must lie in [0, 1], got {}",
                self.probability
            )));
        }
        Ok(())
    }
}

/// Per-run damping state: the per-edge Bernoulli mask and its RNG.
#[derive(Debug, Clone)]
pub struct DampingState {
    config: DampingConfig,
    mask: Vec<bool>,
    rng: ChaCha8Rng,
}

impl DampingState {
    pub fn new(config: DampingConfig, graph: &FactorGraph) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mask = sample_mask(&mut rng, config.probability, graph);
        Ok(Self { config, mask, rng })
    }

    pub fn mask(&self, edge: usize) -> bool {
        self.mask[edge]
    }

    pub fn config(&self) -> &DampingConfig {
        &self.config
    }

    fn maybe_resample(&mut self, graph: &FactorGraph) {
        if self.config.resample_each_iteration {
            self.mask = sample_mask(&mut self.rng, self.config.probability, graph);
        }
    }
}

fn sample_mask(rng: &mut ChaCha8Rng, p: f64, graph: &FactorGraph) -> Vec<bool> {
    graph
        .edges()
        .iter()
        .map(|e| graph.is_branch(e.factor) && rng.gen::<f64>() < p)
        .collect()
}

/// Damped mean: `(1-q) curr + q ((1-zeta) curr + zeta prev)`.
pub fn apply_damping(weight: f64, masked: bool, previous_mean: f64, current_mean: f64) -> f64 {
    if masked {
        (1.0 - weight) * current_mean + weight * previous_mean
    } else {
        current_mean
    }
}

/// One synchronous iteration over the whole graph: all variable-to-factor
/// messages from the previous factor messages, then all branch
/// factor-to-variable messages.
pub fn global_iteration(
    graph: &FactorGraph,
    state: &mut MessageState,
    damping: Option<&mut DampingState>,
) -> Result<IterationStats> {
    iterate(graph, state, damping, None)
}

/// One iteration with tie factors collapsed: tie messages are read from the
/// freeze snapshot and never recomputed; only internal branch factors update.
pub fn local_iteration(
    view: &FreezeView<'_>,
    state: &mut MessageState,
    damping: Option<&mut DampingState>,
) -> Result<IterationStats> {
    iterate(view.graph(), state, damping, Some(view))
}

fn iterate(
    graph: &FactorGraph,
    state: &mut MessageState,
    mut damping: Option<&mut DampingState>,
    view: Option<&FreezeView<'_>>,
) -> Result<IterationStats> {
    if let Some(d) = damping.as_deref_mut() {
        d.maybe_resample(graph);
    }
    let skip_factor = |f: usize| -> bool {
        !graph.is_branch(f) || view.map_or(false, |v| v.is_frozen_edge(graph.factor_edge_ids(f).start))
    };

    // Half-iteration 1: variable-to-factor messages from the previous factor
    // messages. Frozen tie edges contribute their snapshot values, which are
    // bitwise identical to the state entries they pinned.
    for e in 0..graph.edges().len() {
        let edge = graph.edges()[e];
        if skip_factor(edge.factor) {
            continue;
        }
        let (m, v) = variable_to_factor(graph, state, edge.variable, edge.factor)?;
        state.x2f_mean[e] = m;
        state.x2f_var[e] = v;
    }
    state.x2f_ready = true;

    // Half-iteration 2: branch factor-to-variable messages from the fresh
    // variable messages, written to scratch so reads stay on the snapshot.
    let mut stats = IterationStats {
        max_mean_delta: 0.0,
        max_abs_mean: 0.0,
        non_finite: false,
    };
    for f in 0..graph.factor_count() {
        if skip_factor(f) {
            continue;
        }
        for e in graph.factor_edge_ids(f) {
            let variable = graph.edges()[e].variable;
            let (raw_mean, var) = factor_to_variable(graph, state, f, variable);
            let mean = match damping.as_deref() {
                Some(d) => apply_damping(d.config.weight, d.mask(e), state.f2x_mean[e], raw_mean),
                None => raw_mean,
            };
            state.scratch_mean[e] = mean;
            state.scratch_var[e] = var;
            let delta = (mean - state.f2x_mean[e]).abs();
            stats.max_mean_delta = stats.max_mean_delta.max(delta);
            stats.max_abs_mean = stats.max_abs_mean.max(mean.abs());
            if !mean.is_finite() || !var.is_finite() {
                stats.non_finite = true;
            }
        }
    }
    for f in 0..graph.factor_count() {
        if skip_factor(f) {
            continue;
        }
        for e in graph.factor_edge_ids(f) {
            state.f2x_mean[e] = state.scratch_mean[e];
            state.f2x_var[e] = state.scratch_var[e];
        }
    }
    state.iteration += 1;
    Ok(stats)
}

/// Marginal means and variances of every variable.
pub fn compute_marginals(graph: &FactorGraph, state: &MessageState) -> (Vec<f64>, Vec<f64>) {
    let n = graph.variable_count();
    let mut means = vec![0.0; n];
    let mut variances = vec![0.0; n];
    for x in 0..n {
        let mut inv_sum = 0.0;
        let mut weighted = 0.0;
        if let Some((m, v)) = graph.anchor(x) {
            inv_sum += 1.0 / v;
            weighted += m / v;
        }
        for &e in graph.variable_edge_ids(x) {
            let (m, v) = state.factor_to_variable(e);
            inv_sum += 1.0 / v;
            weighted += m / v;
        }
        variances[x] = 1.0 / inv_sum;
        means[x] = variances[x] * weighted;
    }
    (means, variances)
}
