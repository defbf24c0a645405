//! Variance aging and streaming observation updates for the dynamic mode.
//!
//! An observation arrives at `tau`, holds its base variance until `rho`, grows
//! by one of three laws until `theta`, and stays at the ceiling afterwards.
//! The ceiling and the saturation time are two views of one constraint: the
//! growth curve passes through `(theta, ceiling)`. Exactly one of the two is
//! supplied; the other is derived in closed form.
//!
//! Events and aging are evaluated at sequence boundaries only; the message
//! state survives every update, which is what makes warm restarts cheap.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{refresh_leaf_message, MessageState};
use crate::error::{Error, Result};
use crate::graph::{FactorClassification, FactorGraph};
use crate::model::standard_normal;
use crate::scheduler::{resume_alternating, run_alternating, RunConfig, RunResult, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthKind {
    Logarithmic,
    Exponential,
    Linear,
}

/// Three-phase variance growth of one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgingModel {
    pub kind: GrowthKind,
    /// Growth rate `alpha > 0`.
    pub alpha: f64,
    /// Shape `beta >= 0` (logarithmic and exponential kinds).
    pub beta: f64,
    /// Base variance `v_i` held during phase 1.
    pub base_variance: f64,
    /// Arrival time `tau`.
    pub arrival: f64,
    /// End of the hold phase, `rho >= tau`.
    pub hold_until: f64,
    /// Saturation time `theta >= rho`.
    pub saturate_at: f64,
    /// Variance held from `theta` on; equals the curve value at `theta`.
    pub ceiling: f64,
}

impl AgingModel {
    /// Builds a model from the saturation time, deriving the ceiling.
    pub fn with_saturation(
        kind: GrowthKind,
        alpha: f64,
        beta: f64,
        base_variance: f64,
        arrival: f64,
        hold_until: f64,
        saturate_at: f64,
    ) -> Result<Self> {
        let model = Self {
            kind,
            alpha,
            beta,
            base_variance,
            arrival,
            hold_until,
            saturate_at,
            ceiling: 0.0,
        };
        model.validate_base()?;
        if saturate_at < hold_until {
            return Err(Error::InvalidAging(format!(
                "saturation time {saturate_at} precedes hold end {hold_until}"
            )));
        }
        let ceiling = model.growth(saturate_at);
        Ok(Self { ceiling, ..model })
    }

    /// Builds a model from the ceiling, deriving the saturation time.
    pub fn with_ceiling(
        kind: GrowthKind,
        alpha: f64,
        beta: f64,
        base_variance: f64,
        arrival: f64,
        hold_until: f64,
        ceiling: f64,
    ) -> Result<Self> {
        let model = Self {
            kind,
            alpha,
            beta,
            base_variance,
            arrival,
            hold_until,
            saturate_at: hold_until,
            ceiling,
        };
        model.validate_base()?;
        if ceiling < base_variance {
            return Err(Error::InvalidAging(format!(
                "ceiling {ceiling} below base variance {base_variance}"
            )));
        }
        let offset = match kind {
            GrowthKind::Logarithmic => {
                (1.0 + beta) * (((ceiling - base_variance) / alpha).exp() - 1.0)
            }
            GrowthKind::Exponential => {
                (ceiling / base_variance).ln() / (alpha * (1.0 + beta).ln())
            }
            GrowthKind::Linear => (ceiling - base_variance) / alpha,
        };
        if !offset.is_finite() {
            return Err(Error::InvalidAging(
                "saturation time is not finite for these parameters".into(),
            ));
        }
        Ok(Self {
            saturate_at: hold_until + offset,
            ..model
        })
    }

    fn validate_base(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidAging(format!(
                "rate alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidAging(format!(
                "shape beta must be non-negative, got {}",
                self.beta
            )));
        }
        if self.kind == GrowthKind::Exponential && self.beta == 0.0 {
            return Err(Error::InvalidAging(
                "exponential growth needs beta > 0".into(),
            ));
        }
        if !(self.base_variance > 0.0) || !self.base_variance.is_finite() {
            return Err(Error::InvalidAging(format!(
                "base variance must be positive, got {}",
                self.base_variance
            )));
        }
        if self.hold_until < self.arrival {
            return Err(Error::InvalidAging(format!(
                "hold end {} precedes arrival {}",
                self.hold_until, self.arrival
            )));
        }
        Ok(())
    }

    /// Growth curve value at `t >= hold_until`, ignoring the ceiling clamp.
    fn growth(&self, t: f64) -> f64 {
        let dt = t - self.hold_until;
        match self.kind {
            GrowthKind::Logarithmic => {
                self.alpha * ((dt + 1.0 + self.beta) / (1.0 + self.beta)).ln() + self.base_variance
            }
            GrowthKind::Exponential => {
                self.base_variance * (1.0 + self.beta).powf(self.alpha * dt)
            }
            GrowthKind::Linear => self.alpha * dt + self.base_variance,
        }
    }

    /// Variance at time `t`: hold, growth or ceiling phase.
    pub fn variance_at(&self, t: f64) -> Result<f64> {
        if t < self.arrival {
            return Err(Error::TimeBeforeArrival {
                t,
                arrival: self.arrival,
            });
        }
        if t <= self.hold_until {
            Ok(self.base_variance)
        } else if t < self.saturate_at {
            Ok(self.growth(t))
        } else {
            Ok(self.ceiling)
        }
    }
}

/// Config-file form of an aging model: exactly one of `ceiling` and
/// `saturate_at` is given, the other is derived on [`AgingSpec::build`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgingSpec {
    pub kind: GrowthKind,
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    pub base_variance: f64,
    #[serde(default)]
    pub arrival: f64,
    pub hold_until: f64,
    #[serde(default)]
    pub ceiling: Option<f64>,
    #[serde(default)]
    pub saturate_at: Option<f64>,
}

impl AgingSpec {
    pub fn build(&self) -> Result<AgingModel> {
        match (self.ceiling, self.saturate_at) {
            (Some(c), None) => AgingModel::with_ceiling(
                self.kind,
                self.alpha,
                self.beta,
                self.base_variance,
                self.arrival,
                self.hold_until,
                c,
            ),
            (None, Some(s)) => AgingModel::with_saturation(
                self.kind,
                self.alpha,
                self.beta,
                self.base_variance,
                self.arrival,
                self.hold_until,
                s,
            ),
            _ => Err(Error::InvalidAging(
                "give exactly one of ceiling and saturate_at".into(),
            )),
        }
    }
}

/// New observation for one factor at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationEvent {
    pub time: f64,
    pub factor: usize,
    pub observation: f64,
    pub variance: f64,
}

/// Replaces a factor's observation and variance, re-seeding its constant leaf
/// message; all warm branch messages survive.
pub fn apply_event(
    graph: &mut FactorGraph,
    state: &mut MessageState,
    event: &ObservationEvent,
) -> Result<()> {
    graph.update_observation(event.factor, event.observation, event.variance)?;
    refresh_leaf_message(graph, state, event.factor);
    Ok(())
}

/// Resamples each observation independently with probability `p_z` from the
/// generator's law: a fresh uniform state draw pushed through the factor's
/// row plus Gaussian noise at the current variance. Returns changed factors.
pub fn perturb_observations(
    graph: &mut FactorGraph,
    state: &mut MessageState,
    p_z: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&p_z) {
        return Err(Error::InvalidConfig(format!(
            "perturbation probability must lie in [0, 1], got {p_z}"
        )));
    }
    let fresh_state: Vec<f64> = (0..graph.variable_count()).map(|_| rng.gen::<f64>()).collect();
    let mut changed = Vec::new();
    for f in 0..graph.factor_count() {
        if rng.gen::<f64>() >= p_z {
            continue;
        }
        let factor = graph.factor(f);
        let clean: f64 = factor
            .coefficients
            .iter()
            .map(|&(x, h)| h * fresh_state[x])
            .sum();
        let z = clean + factor.variance.sqrt() * standard_normal(rng);
        graph.set_observation_value(f, z)?;
        refresh_leaf_message(graph, state, f);
        changed.push(f);
    }
    Ok(changed)
}

/// Rebuilds the linear model currently encoded by a graph; used to refresh
/// the dense oracle after events mutate observations.
pub fn model_of_graph(graph: &FactorGraph) -> Result<crate::model::LinearModel> {
    crate::model::LinearModel::new(
        graph.factor_count(),
        graph.variable_count(),
        graph
            .edges()
            .iter()
            .map(|e| (e.factor, e.variable, e.coefficient))
            .collect(),
        graph.factors().iter().map(|f| f.observation).collect(),
        graph.factors().iter().map(|f| f.variance).collect(),
    )
}

/// Runs to convergence, then replays time-ordered events: each batch at one
/// timestamp is applied to the warm graph and the run resumes from the live
/// message state. One [`RunResult`] per inter-event interval. When the config
/// carries an oracle, it is re-solved after every batch so convergence is
/// always judged against the current model.
pub fn run_dynamic(
    graph: &mut FactorGraph,
    classification: &FactorClassification,
    schedule: &Schedule,
    config: &RunConfig,
    events: &[ObservationEvent],
) -> Result<Vec<RunResult>> {
    if events.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::InvalidConfig(
            "events must be ordered by time".into(),
        ));
    }
    let mut results = Vec::new();
    let first = run_alternating(graph, classification, schedule, config)?;
    let mut state = first.final_state.clone();
    results.push(first);

    let mut i = 0;
    while i < events.len() {
        let t = events[i].time;
        while i < events.len() && events[i].time == t {
            apply_event(graph, &mut state, &events[i])?;
            i += 1;
        }
        let mut interval_config = config.clone();
        if interval_config.oracle.is_some() {
            interval_config.oracle = Some(crate::analysis::wls_solve(&model_of_graph(graph)?)?);
        }
        let resumed =
            resume_alternating(graph, classification, schedule, &interval_config, state)?;
        state = resumed.final_state.clone();
        results.push(resumed);
    }
    Ok(results)
}
