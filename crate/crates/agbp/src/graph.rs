//! Bipartite factor graph built from a [`LinearModel`], factor classification
//! against a cluster partition, and tie-factor freezing for local iterations.
//!
//! Factor `f_i` is adjacent to exactly the variables with a nonzero in row `i`.
//! Factors of degree 1 are leaves and emit constant messages; factors whose
//! variables span more than one cluster are tie factors. During local
//! iterations a [`FreezeView`] pins tie-factor messages to a snapshot, which
//! makes each tie factor behave as `deg(f)` leaf factors.

use crate::engine::MessageState;
use crate::error::{Error, Result};
use crate::model::{ClusterPartition, LinearModel};

/// Mean of the virtual anchor attached to leafless variables.
pub const ANCHOR_MEAN: f64 = 0.0;
/// Variance of the virtual anchor. Wide enough to leave the estimate
/// untouched at any practical tolerance, finite so message variances cannot
/// run away on graphs without leaf factors.
pub const ANCHOR_VARIANCE: f64 = 1e14;

/// One factor node: row coefficients, observation and observation variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    /// `(variable, h_ij)` pairs sorted by variable index.
    pub coefficients: Vec<(usize, f64)>,
    pub observation: f64,
    pub variance: f64,
}

impl Factor {
    pub fn degree(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.degree() == 1
    }
}

/// Directed edge slot `(factor, variable)`; both message directions share it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub factor: usize,
    pub variable: usize,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    factors: Vec<Factor>,
    variable_count: usize,
    /// Sorted lexicographically by `(factor, variable)`.
    edges: Vec<Edge>,
    factor_edges: Vec<std::ops::Range<usize>>,
    variable_edges: Vec<Vec<usize>>,
    /// `(mean, variance)` virtual anchor per variable; present exactly on
    /// variables with no adjacent leaf factor.
    anchors: Vec<Option<(f64, f64)>>,
}

impl FactorGraph {
    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn variable_count(&self) -> usize {
        self.variable_count
    }

    pub fn factor(&self, id: usize) -> &Factor {
        &self.factors[id]
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge ids belonging to factor `f`, in ascending variable order.
    pub fn factor_edge_ids(&self, f: usize) -> std::ops::Range<usize> {
        self.factor_edges[f].clone()
    }

    /// Edge ids incident to variable `x`.
    pub fn variable_edge_ids(&self, x: usize) -> &[usize] {
        &self.variable_edges[x]
    }

    pub fn is_branch(&self, f: usize) -> bool {
        self.factors[f].degree() > 1
    }

    pub fn branch_count(&self) -> usize {
        self.factors.iter().filter(|f| !f.is_leaf()).count()
    }

    pub fn leaf_count(&self) -> usize {
        self.factors.iter().filter(|f| f.is_leaf()).count()
    }

    /// Virtual anchor `(mean, variance)` of a variable, if it has one.
    pub fn anchor(&self, variable: usize) -> Option<(f64, f64)> {
        self.anchors[variable]
    }

    /// Edge id for `(factor, variable)`, if the edge exists.
    pub fn edge_id(&self, factor: usize, variable: usize) -> Option<usize> {
        let range = self.factor_edges[factor].clone();
        self.edges[range.clone()]
            .binary_search_by_key(&variable, |e| e.variable)
            .ok()
            .map(|k| range.start + k)
    }

    /// Replaces a factor's observation and variance; structure is untouched.
    pub(crate) fn update_observation(&mut self, factor: usize, z: f64, v: f64) -> Result<()> {
        if factor >= self.factors.len() {
            return Err(Error::UnknownFactor(factor));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidModel(format!(
                "variance of factor {factor} must be positive and finite, got {v}"
            )));
        }
        self.factors[factor].observation = z;
        self.factors[factor].variance = v;
        Ok(())
    }

    pub(crate) fn set_observation_value(&mut self, factor: usize, z: f64) -> Result<()> {
        let v = self.factors.get(factor).ok_or(Error::UnknownFactor(factor))?.variance;
        self.update_observation(factor, z, v)
    }
}

/// Builds the factor graph of a model. Rejects variables that are attached to
/// exactly one factor when that factor is a branch factor: the
/// variable-to-factor message would be an empty product.
///
/// Variables with no adjacent leaf factor receive a wide virtual anchor
/// ([`ANCHOR_MEAN`], [`ANCHOR_VARIANCE`]). On graphs made entirely of branch
/// factors the message variances would otherwise grow without bound; the
/// anchor caps them while perturbing the estimate only at the `1e-10` level.
pub fn build_factor_graph(model: &LinearModel) -> Result<FactorGraph> {
    let m = model.rows();
    let n = model.cols();
    let mut factors: Vec<Factor> = (0..m)
        .map(|r| Factor {
            coefficients: Vec::new(),
            observation: model.observations()[r],
            variance: model.variances()[r],
        })
        .collect();
    for &(r, c, h) in model.entries() {
        factors[r].coefficients.push((c, h));
    }

    let mut edges = Vec::with_capacity(model.entries().len());
    let mut factor_edges = Vec::with_capacity(m);
    let mut variable_edges = vec![Vec::new(); n];
    for (f, factor) in factors.iter().enumerate() {
        let start = edges.len();
        for &(x, h) in &factor.coefficients {
            variable_edges[x].push(edges.len());
            edges.push(Edge {
                factor: f,
                variable: x,
                coefficient: h,
            });
        }
        factor_edges.push(start..edges.len());
    }

    let mut anchors = vec![None; n];
    for (x, incident) in variable_edges.iter().enumerate() {
        match incident.as_slice() {
            [] => {
                return Err(Error::InvalidModel(format!(
                    "variable {x} has no adjacent factor"
                )))
            }
            [only] => {
                if factors[edges[*only].factor].degree() > 1 {
                    return Err(Error::UnderdeterminedVariable(x));
                }
            }
            _ => {}
        }
        let has_leaf = incident
            .iter()
            .any(|&e| factors[edges[e].factor].is_leaf());
        if !has_leaf {
            anchors[x] = Some((ANCHOR_MEAN, ANCHOR_VARIANCE));
        }
    }

    Ok(FactorGraph {
        factors,
        variable_count: n,
        edges,
        factor_edges,
        variable_edges,
        anchors,
    })
}

/// Internal/tie split of the factor set with per-cluster edge counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorClassification {
    tie: Vec<bool>,
    home_cluster: Vec<usize>,
    internal_edges_per_cluster: Vec<usize>,
    tie_edges_per_cluster: Vec<usize>,
}

impl FactorClassification {
    pub fn is_tie(&self, factor: usize) -> bool {
        self.tie[factor]
    }

    pub fn tie_factors(&self) -> impl Iterator<Item = usize> + '_ {
        self.tie
            .iter()
            .enumerate()
            .filter_map(|(f, &t)| t.then_some(f))
    }

    pub fn tie_count(&self) -> usize {
        self.tie.iter().filter(|&&t| t).count()
    }

    pub fn internal_count(&self) -> usize {
        self.tie.len() - self.tie_count()
    }

    pub fn home_cluster(&self, factor: usize) -> usize {
        self.home_cluster[factor]
    }

    /// Per-cluster internal edge counts `lambda_{c_i}`.
    pub fn internal_edges(&self) -> &[usize] {
        &self.internal_edges_per_cluster
    }

    /// Per-cluster tie edge counts `gamma_{c_i}`.
    pub fn tie_edges(&self) -> &[usize] {
        &self.tie_edges_per_cluster
    }
}

/// Classifies factors against a partition. The home cluster of each factor is
/// taken from `row_clusters` when provided (block provenance); otherwise it is
/// the majority cluster among adjacent variables, ties broken by lowest id.
pub fn classify_factors(
    graph: &FactorGraph,
    partition: &ClusterPartition,
    row_clusters: Option<&[usize]>,
) -> Result<FactorClassification> {
    if partition.assignment().len() != graph.variable_count() {
        return Err(Error::InvalidModel(format!(
            "partition covers {} variables, graph has {}",
            partition.assignment().len(),
            graph.variable_count()
        )));
    }
    if let Some(rows) = row_clusters {
        if rows.len() != graph.factor_count() {
            return Err(Error::InvalidModel(format!(
                "row_clusters covers {} factors, graph has {}",
                rows.len(),
                graph.factor_count()
            )));
        }
    }
    let s = partition.cluster_count();
    let mut tie = vec![false; graph.factor_count()];
    let mut home = vec![0usize; graph.factor_count()];
    let mut internal_edges = vec![0usize; s];
    let mut tie_edges = vec![0usize; s];

    for (f, factor) in graph.factors().iter().enumerate() {
        let mut counts = vec![0usize; s];
        for &(x, _) in &factor.coefficients {
            counts[partition.cluster_of(x)] += 1;
        }
        let spans = counts.iter().filter(|&&c| c > 0).count();
        tie[f] = spans >= 2;
        home[f] = match row_clusters {
            Some(rows) => rows[f],
            None => {
                let mut best = 0;
                for c in 1..s {
                    if counts[c] > counts[best] {
                        best = c;
                    }
                }
                best
            }
        };
        if tie[f] {
            tie_edges[home[f]] += factor.degree();
        } else {
            internal_edges[home[f]] += factor.degree();
        }
    }

    Ok(FactorClassification {
        tie,
        home_cluster: home,
        internal_edges_per_cluster: internal_edges,
        tie_edges_per_cluster: tie_edges,
    })
}

/// Snapshot of tie-factor messages taken at the start of a local phase.
///
/// While the view is active, local iterations read tie-factor-to-variable
/// messages from the snapshot and never recompute them. The base graph is
/// never modified; dropping or defreezing the view restores full semantics.
#[derive(Debug, Clone)]
pub struct FreezeView<'a> {
    graph: &'a FactorGraph,
    /// Per-edge flag: true when the edge belongs to a tie factor.
    frozen_edges: Vec<bool>,
    snapshot_means: Vec<f64>,
    snapshot_variances: Vec<f64>,
    tie_count: usize,
    frozen_edge_count: usize,
}

impl<'a> FreezeView<'a> {
    pub fn graph(&self) -> &'a FactorGraph {
        self.graph
    }

    pub fn is_frozen_edge(&self, edge: usize) -> bool {
        self.frozen_edges[edge]
    }

    pub fn snapshot(&self, edge: usize) -> (f64, f64) {
        (self.snapshot_means[edge], self.snapshot_variances[edge])
    }

    /// Branch-factor count with tie factors collapsed: `b - g`.
    pub fn effective_branch_count(&self) -> usize {
        self.graph.branch_count() - self.tie_count
    }

    /// Leaf-factor count with tie factors collapsed: `l + e`.
    pub fn effective_leaf_count(&self) -> usize {
        self.graph.leaf_count() + self.frozen_edge_count
    }

    /// Restores full branch semantics; the graph was never altered.
    pub fn defreeze(self) -> &'a FactorGraph {
        self.graph
    }
}

/// Snapshots all tie-factor-to-variable messages.
pub fn freeze_tie_factors<'a>(
    graph: &'a FactorGraph,
    classification: &FactorClassification,
    messages: &MessageState,
) -> Result<FreezeView<'a>> {
    let mut frozen_edges = vec![false; graph.edges().len()];
    let mut means = vec![0.0; graph.edges().len()];
    let mut variances = vec![0.0; graph.edges().len()];
    let mut frozen_edge_count = 0;
    for f in classification.tie_factors() {
        for e in graph.factor_edge_ids(f) {
            let (m, v) = messages.factor_to_variable(e);
            if !m.is_finite() || !(v > 0.0) || !v.is_finite() {
                return Err(Error::MissingTieMessage {
                    factor: f,
                    variable: graph.edges()[e].variable,
                });
            }
            frozen_edges[e] = true;
            means[e] = m;
            variances[e] = v;
            frozen_edge_count += 1;
        }
    }
    Ok(FreezeView {
        graph,
        frozen_edges,
        snapshot_means: means,
        snapshot_variances: variances,
        tie_count: classification.tie_count(),
        frozen_edge_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;

    fn diag_model() -> LinearModel {
        LinearModel::new(
            2,
            2,
            vec![(0, 0, 2.0), (1, 1, 3.0)],
            vec![4.0, 9.0],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn diagonal_model_is_all_leaves() {
        let graph = build_factor_graph(&diag_model()).unwrap();
        assert_eq!(graph.leaf_count(), 2);
        assert_eq!(graph.branch_count(), 0);
    }

    #[test]
    fn degree_rule_classifies_branch_and_leaf() {
        let model = LinearModel::new(
            3,
            2,
            vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (2, 1, 1.0)],
            vec![0.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        let graph = build_factor_graph(&model).unwrap();
        assert!(graph.is_branch(0));
        assert!(!graph.is_branch(1));
        assert!(!graph.is_branch(2));
        assert_eq!(graph.factor(0).degree(), 2);
    }

    #[test]
    fn underdetermined_variable_rejected() {
        let good = LinearModel::new(
            3,
            2,
            vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (2, 1, 1.0)],
            vec![0.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        // x1 is adjacent only to the branch factor 0.
        let bad = LinearModel::new(
            3,
            2,
            vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (2, 0, 1.0)],
            vec![0.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        assert!(build_factor_graph(&good).is_ok());
        assert!(matches!(
            build_factor_graph(&bad),
            Err(Error::UnderdeterminedVariable(1))
        ));
    }

    #[test]
    fn classification_internal_vs_tie() {
        let model = LinearModel::new(
            3,
            2,
            vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 2.0), (2, 1, 2.0)],
            vec![0.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        let graph = build_factor_graph(&model).unwrap();

        let same = ClusterPartition::new(2, vec![0, 0]).unwrap_err();
        let _ = same; // cluster 1 would own nothing
        let one_cluster = ClusterPartition::new(1, vec![0, 0]).unwrap();
        let cls = classify_factors(&graph, &one_cluster, None).unwrap();
        assert_eq!(cls.tie_count(), 0);

        let split = ClusterPartition::new(2, vec![0, 1]).unwrap();
        let cls = classify_factors(&graph, &split, None).unwrap();
        assert!(cls.is_tie(0));
        assert!(!cls.is_tie(1));
        assert!(!cls.is_tie(2));
        // lambda + gamma edges account for every nonzero
        let total: usize =
            cls.internal_edges().iter().sum::<usize>() + cls.tie_edges().iter().sum::<usize>();
        assert_eq!(total, model.entries().len());
    }

    #[test]
    fn classification_invariant_to_relabeling() {
        let model = LinearModel::new(
            3,
            2,
            vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 2.0), (2, 1, 2.0)],
            vec![0.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        let graph = build_factor_graph(&model).unwrap();
        let a = ClusterPartition::new(2, vec![0, 1]).unwrap();
        let b = ClusterPartition::new(2, vec![1, 0]).unwrap();
        let ca = classify_factors(&graph, &a, None).unwrap();
        let cb = classify_factors(&graph, &b, None).unwrap();
        for f in 0..graph.factor_count() {
            assert_eq!(ca.is_tie(f), cb.is_tie(f));
        }
    }
}
