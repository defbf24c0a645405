//! Dense reference solver and spectral view of the message recursion.
//!
//! Mean messages of branch factors evolve affinely: `m' = Omega m + c_f` once
//! variances have reached their fixed point. Convergence of the synchronous
//! recursion is therefore equivalent to `rho(Omega) < 1`, and the fixed point
//! is `m* = (I - Omega)^-1 c_f`. The edge layout of `Omega` and `c_f` is the
//! lexicographic `(factor, variable)` order restricted to branch factors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::leaf_message;
use crate::error::{Error, Result};
use crate::graph::{FactorClassification, FactorGraph};
use crate::model::LinearModel;

/// Stopping tolerance of the variance-only fixed-point iteration.
pub const VARIANCE_TOLERANCE: f64 = 1e-12;
/// Iteration cap of the variance-only fixed-point iteration.
pub const VARIANCE_MAX_ITERATIONS: usize = 1_000_000;
/// Above this dimension the spectral radius falls back to power iteration.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

/// Converged message variances; `f2x` and `x2f` are indexed by graph edge id.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceFixedPoint {
    pub f2x: Vec<f64>,
    pub x2f: Vec<f64>,
    pub iterations: usize,
}

/// Iterates the variance recursion alone until it settles. Variances do not
/// depend on means, so this converges even when the mean recursion diverges.
pub fn solve_variance_fixed_point(graph: &FactorGraph) -> Result<VarianceFixedPoint> {
    let ne = graph.edges().len();
    let mut f2x = vec![0.0; ne];
    let mut x2f = vec![0.0; ne];
    for (f, factor) in graph.factors().iter().enumerate() {
        if factor.is_leaf() {
            let e = graph.factor_edge_ids(f).start;
            f2x[e] = leaf_message(factor).1;
        } else {
            for e in graph.factor_edge_ids(f) {
                f2x[e] = 1e3;
            }
        }
    }

    for it in 1..=VARIANCE_MAX_ITERATIONS {
        // x -> f from the previous factor variances; messages toward leaf
        // factors are never consumed, so only branch targets are updated.
        for e in 0..ne {
            let edge = graph.edges()[e];
            if graph.factor(edge.factor).is_leaf() {
                continue;
            }
            let mut inv_sum = 0.0;
            let mut any = false;
            if let Some((_, v)) = graph.anchor(edge.variable) {
                inv_sum += 1.0 / v;
            }
            for &a in graph.variable_edge_ids(edge.variable) {
                if graph.edges()[a].factor == edge.factor {
                    continue;
                }
                inv_sum += 1.0 / f2x[a];
                any = true;
            }
            if !any {
                return Err(Error::UnderdeterminedVariable(edge.variable));
            }
            x2f[e] = 1.0 / inv_sum;
        }
        // f -> x on branch factors.
        let mut max_delta = 0.0f64;
        for (f, factor) in graph.factors().iter().enumerate() {
            if factor.is_leaf() {
                continue;
            }
            for e in graph.factor_edge_ids(f) {
                let h_j = graph.edges()[e].coefficient;
                let mut var_sum = 0.0;
                for b in graph.factor_edge_ids(f) {
                    if b == e {
                        continue;
                    }
                    let h = graph.edges()[b].coefficient;
                    var_sum += h * h * x2f[b];
                }
                let v = (factor.variance + var_sum) / (h_j * h_j);
                let delta = (v - f2x[e]).abs() / f2x[e].abs().max(1.0);
                max_delta = max_delta.max(delta);
                f2x[e] = v;
            }
        }
        if max_delta <= VARIANCE_TOLERANCE {
            return Ok(VarianceFixedPoint {
                f2x,
                x2f,
                iterations: it,
            });
        }
    }
    Err(Error::IterationLimit(format!(
        "variance fixed point not reached within {VARIANCE_MAX_ITERATIONS} iterations"
    )))
}

/// Affine description of the branch mean recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub omega: DMatrix<f64>,
    pub c_f: DVector<f64>,
    /// Graph edge ids backing each dense index, lexicographic order.
    pub branch_edges: Vec<usize>,
}

impl SpectralDecomposition {
    pub fn dimension(&self) -> usize {
        self.branch_edges.len()
    }
}

/// Edge ids of branch factors in lexicographic `(factor, variable)` order.
pub fn branch_edge_layout(graph: &FactorGraph) -> Vec<usize> {
    (0..graph.edges().len())
        .filter(|&e| graph.is_branch(graph.edges()[e].factor))
        .collect()
}

/// Builds `Omega` and `c_f` from the variance fixed point.
pub fn build_decomposition(
    graph: &FactorGraph,
    variances: &VarianceFixedPoint,
) -> SpectralDecomposition {
    let branch_edges = branch_edge_layout(graph);
    let d = branch_edges.len();
    let mut dense_index = vec![usize::MAX; graph.edges().len()];
    for (p, &e) in branch_edges.iter().enumerate() {
        dense_index[e] = p;
    }

    // Constant drive per variable from adjacent leaf factors (and the virtual
    // anchor where present): sum m_r / v_r.
    let mut leaf_drive = vec![0.0; graph.variable_count()];
    for x in 0..graph.variable_count() {
        if let Some((m, v)) = graph.anchor(x) {
            leaf_drive[x] += m / v;
        }
    }
    for factor in graph.factors() {
        if factor.is_leaf() {
            let x = factor.coefficients[0].0;
            let (m, v) = leaf_message(factor);
            leaf_drive[x] += m / v;
        }
    }

    let mut omega = DMatrix::zeros(d, d);
    let mut c_f = DVector::zeros(d);
    for (p, &e) in branch_edges.iter().enumerate() {
        let edge = graph.edges()[e];
        let (f_i, x_j, h_ij) = (edge.factor, edge.variable, edge.coefficient);
        let mut c = graph.factor(f_i).observation / h_ij;
        for ke in graph.factor_edge_ids(f_i) {
            let kedge = graph.edges()[ke];
            let x_k = kedge.variable;
            if x_k == x_j {
                continue;
            }
            let scale = (kedge.coefficient / h_ij) * variances.x2f[ke];
            c -= scale * leaf_drive[x_k];
            for &qe in graph.variable_edge_ids(x_k) {
                let qedge = graph.edges()[qe];
                if qedge.factor == f_i || !graph.is_branch(qedge.factor) {
                    continue;
                }
                let q = dense_index[qe];
                omega[(p, q)] -= scale / variances.f2x[qe];
            }
        }
        c_f[p] = c;
    }

    SpectralDecomposition {
        omega,
        c_f,
        branch_edges,
    }
}

/// Variance fixed point plus `Omega`/`c_f` in one call.
pub fn analyze(graph: &FactorGraph) -> Result<SpectralDecomposition> {
    let variances = solve_variance_fixed_point(graph)?;
    Ok(build_decomposition(graph, &variances))
}

/// Spectral radius: dense eigenvalues up to [`DENSE_EIGEN_LIMIT`], power
/// iteration beyond.
pub fn spectral_radius(matrix: &DMatrix<f64>) -> f64 {
    let d = matrix.nrows();
    if d == 0 {
        return 0.0;
    }
    if d <= DENSE_EIGEN_LIMIT {
        matrix
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|ev| ev.norm())
            .fold(0.0, f64::max)
    } else {
        power_iteration_radius(matrix)
    }
}

fn power_iteration_radius(matrix: &DMatrix<f64>) -> f64 {
    let d = matrix.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut v = DVector::from_fn(d, |_, _| rng.gen::<f64>() - 0.5);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..100_000 {
        let w = matrix * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - estimate).abs() <= 1e-8 * next.max(1.0) {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Solves `(I - Omega) m = c_f` for the fixed-point branch means.
pub fn fixed_point_means(decomposition: &SpectralDecomposition) -> Result<DVector<f64>> {
    let d = decomposition.dimension();
    if d == 0 {
        return Ok(DVector::zeros(0));
    }
    let system = DMatrix::identity(d, d) - &decomposition.omega;
    let lu = system.clone().lu();
    let means = lu.solve(&decomposition.c_f).ok_or_else(|| {
        Error::RankDeficient("I - Omega is singular; recursion has no unique fixed point".into())
    })?;
    let residual = (&system * &means - &decomposition.c_f).amax();
    let scale = decomposition.c_f.amax().max(1.0);
    if residual > 1e-9 * scale {
        return Err(Error::RankDeficient(format!(
            "fixed-point solve residual {residual:.3e} exceeds tolerance"
        )));
    }
    Ok(means)
}

/// Diagonal 0/1 projector selecting the branch edges updated during local
/// iterations: edges of internal (non-tie) branch factors.
pub fn build_q_projector(
    graph: &FactorGraph,
    classification: &FactorClassification,
    branch_edges: &[usize],
) -> DMatrix<f64> {
    let d = branch_edges.len();
    let mut q = DMatrix::zeros(d, d);
    for (p, &e) in branch_edges.iter().enumerate() {
        if !classification.is_tie(graph.edges()[e].factor) {
            q[(p, p)] = 1.0;
        }
    }
    q
}

/// Weighted least squares estimate `argmin (z - Hx)^T V^-1 (z - Hx)` through
/// the normal equations.
pub fn wls_solve(model: &LinearModel) -> Result<Vec<f64>> {
    let (m, n) = (model.rows(), model.cols());
    let mut h = DMatrix::zeros(m, n);
    for &(r, c, val) in model.entries() {
        h[(r, c)] = val;
    }
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for r in 0..m {
        let w = 1.0 / model.variances()[r];
        let row = h.row(r);
        for i in 0..n {
            if row[i] == 0.0 {
                continue;
            }
            b[i] += w * row[i] * model.observations()[r];
            for j in 0..n {
                if row[j] != 0.0 {
                    a[(i, j)] += w * row[i] * row[j];
                }
            }
        }
    }
    let x = match a.clone().cholesky() {
        Some(chol) => {
            // A consistent singular system can slip through Cholesky with a
            // near-zero pivot; guard on the factor's diagonal spread.
            let l = chol.l();
            let diag: Vec<f64> = (0..n).map(|i| l[(i, i)]).collect();
            let max_pivot = diag.iter().cloned().fold(0.0, f64::max);
            if diag.iter().any(|&p| !(p > 1e-7 * max_pivot)) {
                return Err(Error::RankDeficient(
                    "normal equations are numerically singular".into(),
                ));
            }
            chol.solve(&b)
        }
        None => {
            return Err(Error::RankDeficient(
                "normal equations are not positive definite".into(),
            ))
        }
    };
    let residual: f64 = (&a * &x - &b).amax();
    if !(residual <= 1e-8 * b.amax().max(1.0)) {
        return Err(Error::RankDeficient(format!(
            "normal-equation residual {residual:.3e} exceeds tolerance"
        )));
    }
    Ok(x.iter().copied().collect())
}
