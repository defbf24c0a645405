//! Synchronous and alternating run orchestration, convergence and divergence
//! detection, iteration and sequence bookkeeping.
//!
//! With an oracle estimate supplied, convergence means the RMSE between the
//! current marginal means and the oracle dropped to the tolerance (the
//! protocol used throughout the experiments); without one it means the max
//! absolute mean-message change fell below it. A run counts as diverged as
//! soon as any branch mean crosses [`DIVERGENCE_THRESHOLD`] or turns
//! non-finite.

use serde::{Deserialize, Serialize};

use crate::engine::{
    self, compute_marginals, init_messages, DampingConfig, DampingState, MessageState,
};
use crate::error::{Error, Result};
use crate::graph::{freeze_tie_factors, FactorClassification, FactorGraph};

/// Magnitude at which a mean message counts as diverged. Generous because
/// anchored leafless graphs push messages through an `ANCHOR_VARIANCE`-scale
/// transient before they settle; a truly unstable recursion still crosses
/// this within a few hundred iterations.
pub const DIVERGENCE_THRESHOLD: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceOrder {
    GlobalFirst,
    LocalFirst,
}

/// Alternating schedule: `globals` global then `locals` local iterations per
/// sequence (order configurable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub globals: usize,
    pub locals: usize,
    #[serde(default = "default_order")]
    pub order: SequenceOrder,
}

fn default_order() -> SequenceOrder {
    SequenceOrder::GlobalFirst
}

impl Schedule {
    pub fn new(globals: usize, locals: usize) -> Self {
        Self {
            globals,
            locals,
            order: SequenceOrder::GlobalFirst,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.globals == 0 {
            return Err(Error::InvalidConfig(
                "a sequence needs at least one global iteration".into(),
            ));
        }
        Ok(())
    }

    pub fn iterations_per_sequence(&self) -> usize {
        self.globals + self.locals
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub max_iterations: usize,
    pub max_sequences: usize,
    pub tolerance: f64,
    /// Reference estimate (usually the dense WLS solution). When present,
    /// convergence is judged by RMSE against it.
    pub oracle: Option<Vec<f64>>,
    pub damping: Option<DampingConfig>,
    pub prior_mean: f64,
    pub prior_variance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            max_sequences: 10_000,
            tolerance: 1e-5,
            oracle: None,
            damping: None,
            prior_mean: 0.0,
            prior_variance: 1e3,
        }
    }
}

impl RunConfig {
    fn validate(&self, graph: &FactorGraph) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if let Some(oracle) = &self.oracle {
            if oracle.len() != graph.variable_count() {
                return Err(Error::LengthMismatch(oracle.len(), graph.variable_count()));
            }
        }
        Ok(())
    }
}

/// Outcome of a run. `converged` and `diverged` are mutually exclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub converged: bool,
    pub diverged: bool,
    /// Total iterations executed (`nu`, or `nu_s * (nu_g + nu_l)`).
    pub iterations: usize,
    /// Sequences executed (`nu_s`); `None` for synchronous runs.
    pub sequences: Option<usize>,
    pub estimate: Vec<f64>,
    pub marginal_variances: Vec<f64>,
    /// RMSE against the oracle at each checkpoint (iteration or sequence).
    pub rmse_history: Vec<f64>,
    /// Max absolute mean-message change at each checkpoint.
    pub residual_history: Vec<f64>,
    pub final_state: MessageState,
}

/// Root mean square error `sqrt(sum (a_i - b_i)^2 / n)`.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Runs synchronous GBP until the convergence criterion, divergence or the
/// iteration cap.
pub fn run_synchronous(graph: &FactorGraph, config: &RunConfig) -> Result<RunResult> {
    config.validate(graph)?;
    let mut state = init_messages(graph, config.prior_mean, config.prior_variance)?;
    let mut damping = config
        .damping
        .map(|c| DampingState::new(c, graph))
        .transpose()?;

    let mut rmse_history = Vec::new();
    let mut residual_history = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        let stats = engine::global_iteration(graph, &mut state, damping.as_mut())?;
        iterations += 1;
        residual_history.push(stats.max_mean_delta);
        if stats.non_finite || stats.max_abs_mean > DIVERGENCE_THRESHOLD {
            diverged = true;
            break;
        }
        match &config.oracle {
            Some(oracle) => {
                let (means, _) = compute_marginals(graph, &state);
                let err = rmse(&means, oracle)?;
                rmse_history.push(err);
                if err <= config.tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                if stats.max_mean_delta <= config.tolerance {
                    converged = true;
                    break;
                }
            }
        }
    }

    let (estimate, marginal_variances) = if diverged {
        (vec![f64::NAN; graph.variable_count()], vec![f64::NAN; graph.variable_count()])
    } else {
        compute_marginals(graph, &state)
    };
    Ok(RunResult {
        converged,
        diverged,
        iterations,
        sequences: None,
        estimate,
        marginal_variances,
        rmse_history,
        residual_history,
        final_state: state,
    })
}

/// Runs the alternating scheduler from a cold start.
pub fn run_alternating(
    graph: &FactorGraph,
    classification: &FactorClassification,
    schedule: &Schedule,
    config: &RunConfig,
) -> Result<RunResult> {
    config.validate(graph)?;
    schedule.validate()?;
    let state = init_messages(graph, config.prior_mean, config.prior_variance)?;
    alternating_from(graph, classification, schedule, config, state, false)
}

/// Continues the alternating scheduler from a warm message state. When the
/// warm state already satisfies the oracle criterion, zero sequences run.
pub fn resume_alternating(
    graph: &FactorGraph,
    classification: &FactorClassification,
    schedule: &Schedule,
    config: &RunConfig,
    state: MessageState,
) -> Result<RunResult> {
    config.validate(graph)?;
    schedule.validate()?;
    alternating_from(graph, classification, schedule, config, state, true)
}

fn alternating_from(
    graph: &FactorGraph,
    classification: &FactorClassification,
    schedule: &Schedule,
    config: &RunConfig,
    mut state: MessageState,
    warm: bool,
) -> Result<RunResult> {
    let mut damping = config
        .damping
        .map(|c| DampingState::new(c, graph))
        .transpose()?;

    let mut rmse_history = Vec::new();
    let mut residual_history = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut sequences = 0;
    let mut iterations = 0;

    if warm {
        if let Some(oracle) = &config.oracle {
            let (means, _) = compute_marginals(graph, &state);
            let err = rmse(&means, oracle)?;
            if err <= config.tolerance {
                rmse_history.push(err);
                converged = true;
            }
        }
    }

    'outer: while !converged && sequences < config.max_sequences {
        let mut sequence_residual = 0.0f64;

        let phases: [(bool, usize); 2] = match schedule.order {
            SequenceOrder::GlobalFirst => [(true, schedule.globals), (false, schedule.locals)],
            SequenceOrder::LocalFirst => [(false, schedule.locals), (true, schedule.globals)],
        };
        for (global, count) in phases {
            if count == 0 {
                continue;
            }
            if global {
                for _ in 0..count {
                    let stats = engine::global_iteration(graph, &mut state, damping.as_mut())?;
                    iterations += 1;
                    sequence_residual = sequence_residual.max(stats.max_mean_delta);
                    if stats.non_finite || stats.max_abs_mean > DIVERGENCE_THRESHOLD {
                        diverged = true;
                        break 'outer;
                    }
                }
            } else {
                let view = freeze_tie_factors(graph, classification, &state)?;
                for _ in 0..count {
                    let stats = engine::local_iteration(&view, &mut state, damping.as_mut())?;
                    iterations += 1;
                    sequence_residual = sequence_residual.max(stats.max_mean_delta);
                    if stats.non_finite || stats.max_abs_mean > DIVERGENCE_THRESHOLD {
                        diverged = true;
                        break 'outer;
                    }
                }
                view.defreeze();
            }
        }

        sequences += 1;
        residual_history.push(sequence_residual);
        match &config.oracle {
            Some(oracle) => {
                let (means, _) = compute_marginals(graph, &state);
                let err = rmse(&means, oracle)?;
                rmse_history.push(err);
                if err <= config.tolerance {
                    converged = true;
                }
            }
            None => {
                if sequence_residual <= config.tolerance {
                    converged = true;
                }
            }
        }
    }

    let (estimate, marginal_variances) = if diverged {
        (vec![f64::NAN; graph.variable_count()], vec![f64::NAN; graph.variable_count()])
    } else {
        compute_marginals(graph, &state)
    };
    Ok(RunResult {
        converged,
        diverged,
        iterations,
        sequences: Some(sequences),
        estimate,
        marginal_variances,
        rmse_history,
        residual_history,
        final_state: state,
    })
}
