//! Sparse linear models `z = Hx + u` and the randomized clustered instance generator.
//!
//! A [`LinearModel`] stores the coefficient matrix `H` as triplets together with
//! the observation vector `z` and per-observation variances `v`. Generated
//! instances follow a block-clustered layout: each cluster owns a contiguous
//! band of rows and columns, off-diagonal entries are sampled i.i.d. uniform on
//! `[0, 1)` with inclusion probabilities chosen to match the expected internal
//! and tie edge counts, and square kinds receive the diagonal increment rule
//! `h_ii = sum_{j != i} h_ij + delta` over the assembled global row.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse linear model: coefficients, observations and observation variances.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    observations: Vec<f64>,
    variances: Vec<f64>,
}

impl LinearModel {
    pub fn new(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
        observations: Vec<f64>,
        variances: Vec<f64>,
    ) -> Result<Self> {
        if observations.len() != rows {
            return Err(Error::InvalidModel(format!(
                "observation vector has length {} but the model has {} rows",
                observations.len(),
                rows
            )));
        }
        if variances.len() != rows {
            return Err(Error::InvalidModel(format!(
                "variance vector has length {} but the model has {} rows",
                variances.len(),
                rows
            )));
        }
        for (i, &v) in variances.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "variance of row {i} must be positive and finite, got {v}"
                )));
            }
        }
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_seen = vec![false; rows];
        for w in 0..entries.len() {
            let (r, c, h) = entries[w];
            if r >= rows || c >= cols {
                return Err(Error::InvalidModel(format!(
                    "entry ({r}, {c}) is outside the {rows}x{cols} matrix"
                )));
            }
            if !h.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "entry ({r}, {c}) has non-finite coefficient {h}"
                )));
            }
            if w > 0 && (entries[w - 1].0, entries[w - 1].1) == (r, c) {
                return Err(Error::InvalidModel(format!(
                    "duplicate entry at ({r}, {c})"
                )));
            }
            row_seen[r] = true;
        }
        if let Some(r) = row_seen.iter().position(|&s| !s) {
            return Err(Error::InvalidModel(format!(
                "row {r} has no nonzero entries"
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
            observations,
            variances,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Triplets sorted lexicographically by `(row, col)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn set_observation(&mut self, row: usize, z: f64) -> Result<()> {
        if row >= self.rows {
            return Err(Error::UnknownFactor(row));
        }
        self.observations[row] = z;
        Ok(())
    }

    pub fn set_variance(&mut self, row: usize, v: f64) -> Result<()> {
        if row >= self.rows {
            return Err(Error::UnknownFactor(row));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidModel(format!(
                "variance of row {row} must be positive and finite, got {v}"
            )));
        }
        self.variances[row] = v;
        Ok(())
    }
}

/// Assignment of variable nodes to clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    cluster_count: usize,
    assignment: Vec<usize>,
}

impl ClusterPartition {
    pub fn new(cluster_count: usize, assignment: Vec<usize>) -> Result<Self> {
        if cluster_count == 0 {
            return Err(Error::InvalidModel(
                "partition needs at least one cluster".into(),
            ));
        }
        let mut populated = vec![false; cluster_count];
        for (j, &c) in assignment.iter().enumerate() {
            if c >= cluster_count {
                return Err(Error::InvalidModel(format!(
                    "variable {j} assigned to cluster {c}, but only {cluster_count} clusters exist"
                )));
            }
            populated[c] = true;
        }
        if let Some(c) = populated.iter().position(|&p| !p) {
            return Err(Error::InvalidModel(format!("cluster {c} owns no variables")));
        }
        Ok(Self {
            cluster_count,
            assignment,
        })
    }

    /// Contiguous blocks of `cols_per_cluster` variables per cluster.
    pub fn contiguous(cluster_count: usize, cols_per_cluster: usize) -> Self {
        let assignment = (0..cluster_count)
            .flat_map(|c| std::iter::repeat(c).take(cols_per_cluster))
            .collect();
        Self {
            cluster_count,
            assignment,
        }
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_of(&self, variable: usize) -> usize {
        self.assignment[variable]
    }
}

/// Home cluster of each row under the contiguous block layout of the generator.
pub fn contiguous_row_clusters(cluster_count: usize, rows_per_cluster: usize) -> Vec<usize> {
    (0..cluster_count)
        .flat_map(|c| std::iter::repeat(c).take(rows_per_cluster))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Symmetric,
    Nonsymmetric,
    Rectangular,
}

/// Observation-variance assignment for generated instances.
///
/// `Split` gives the first `cols_per_cluster` rows of each cluster (the
/// linearly independent core) one value and the remaining rows another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceScheme {
    Uniform(f64),
    Split { independent: f64, dependent: f64 },
}

impl Default for VarianceScheme {
    fn default() -> Self {
        VarianceScheme::Uniform(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub cluster_count: usize,
    pub rows_per_cluster: usize,
    pub cols_per_cluster: usize,
    /// Expected number of internal (off-diagonal) edges per cluster.
    pub internal_edges: f64,
    /// Expected number of tie edges per cluster.
    pub tie_edges: f64,
    pub kind: MatrixKind,
    #[serde(default)]
    pub diagonal_increment: f64,
    #[serde(default)]
    pub variances: VarianceScheme,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let (s, mc, nc) = (
            self.cluster_count,
            self.rows_per_cluster,
            self.cols_per_cluster,
        );
        if s == 0 || mc == 0 || nc == 0 {
            return Err(Error::InvalidSpec(
                "cluster_count, rows_per_cluster and cols_per_cluster must be positive".into(),
            ));
        }
        match self.kind {
            MatrixKind::Symmetric | MatrixKind::Nonsymmetric => {
                if mc != nc {
                    return Err(Error::InvalidSpec(format!(
                        "{:?} kind requires rows_per_cluster == cols_per_cluster, got {mc} x {nc}",
                        self.kind
                    )));
                }
            }
            MatrixKind::Rectangular => {
                if mc <= nc {
                    return Err(Error::InvalidSpec(format!(
                        "rectangular kind requires rows_per_cluster > cols_per_cluster, got {mc} x {nc}"
                    )));
                }
            }
        }
        if !(self.internal_edges >= 0.0) || self.internal_edges > (mc * nc) as f64 {
            return Err(Error::InvalidSpec(format!(
                "internal_edges must lie in [0, {}], got {}",
                mc * nc,
                self.internal_edges
            )));
        }
        let tie_cap = (mc * nc * (s - 1)) as f64;
        if !(self.tie_edges >= 0.0) || self.tie_edges > tie_cap {
            return Err(Error::InvalidSpec(format!(
                "tie_edges must lie in [0, {tie_cap}], got {}",
                self.tie_edges
            )));
        }
        if !(self.diagonal_increment >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "diagonal_increment must be nonnegative, got {}",
                self.diagonal_increment
            )));
        }
        let internal_candidates = nc.saturating_sub(1);
        if internal_candidates == 0 && self.internal_edges > 0.0 {
            return Err(Error::InvalidSpec(
                "internal_edges > 0 requires more than one variable per cluster".into(),
            ));
        }
        if s == 1 && self.tie_edges > 0.0 {
            return Err(Error::InvalidSpec(
                "tie_edges > 0 requires more than one cluster".into(),
            ));
        }
        match self.variances {
            VarianceScheme::Uniform(v) => {
                if !(v > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "uniform variance must be positive, got {v}"
                    )));
                }
            }
            VarianceScheme::Split {
                independent,
                dependent,
            } => {
                if !(independent > 0.0) || !(dependent > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "split variances must be positive, got {independent} / {dependent}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn variance_for_row(&self, global_row: usize) -> f64 {
        match self.variances {
            VarianceScheme::Uniform(v) => v,
            VarianceScheme::Split {
                independent,
                dependent,
            } => {
                let local = global_row % self.rows_per_cluster;
                if local < self.cols_per_cluster {
                    independent
                } else {
                    dependent
                }
            }
        }
    }
}

const MAX_ROW_RETRIES: usize = 100;
const MAX_INSTANCE_RETRIES: usize = 100;

/// Generates a random clustered instance together with its (contiguous)
/// partition. Deterministic given the spec, including the seed.
pub fn generate_model(spec: &GeneratorSpec) -> Result<(LinearModel, ClusterPartition)> {
    spec.validate()?;
    // Instances that end up with an all-zero row (possible when delta = 0) or an
    // underdetermined variable are redrawn from a derived seed.
    for attempt in 0..MAX_INSTANCE_RETRIES {
        let seed = spec.seed.wrapping_add((attempt as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match try_generate(spec, &mut rng) {
            Ok(model) => {
                let partition =
                    ClusterPartition::contiguous(spec.cluster_count, spec.cols_per_cluster);
                return Ok((model, partition));
            }
            Err(RetryableError::Fatal(e)) => return Err(e),
            Err(RetryableError::Retry(_)) => continue,
        }
    }
    Err(Error::Generation(format!(
        "no valid instance after {MAX_INSTANCE_RETRIES} attempts for seed {}",
        spec.seed
    )))
}

enum RetryableError {
    /// Structural defect fixable by redrawing the instance.
    #[allow(dead_code)]
    Retry(String),
    Fatal(Error),
}

fn try_generate(
    spec: &GeneratorSpec,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<LinearModel, RetryableError> {
    let s = spec.cluster_count;
    let (mc, nc) = (spec.rows_per_cluster, spec.cols_per_cluster);
    let (m, n) = (s * mc, s * nc);
    let mut dok: BTreeMap<(usize, usize), f64> = BTreeMap::new();

    match spec.kind {
        MatrixKind::Symmetric => {
            let pairs = (nc * (nc - 1) / 2).max(1) as f64;
            let p_int = spec.internal_edges / (2.0 * pairs);
            for c in 0..s {
                let off = c * nc;
                for i in 0..nc {
                    for j in (i + 1)..nc {
                        if rng.gen::<f64>() < p_int {
                            let h: f64 = rng.gen();
                            dok.insert((off + i, off + j), h);
                            dok.insert((off + j, off + i), h);
                        }
                    }
                }
            }
            if s > 1 {
                let p_tie = spec.tie_edges / (mc * nc * (s - 1)) as f64;
                for a in 0..s {
                    for b in (a + 1)..s {
                        for i in 0..nc {
                            for j in 0..nc {
                                if rng.gen::<f64>() < p_tie {
                                    let h: f64 = rng.gen();
                                    dok.insert((a * nc + i, b * nc + j), h);
                                    dok.insert((b * nc + j, a * nc + i), h);
                                }
                            }
                        }
                    }
                }
            }
            apply_diagonal_rule(&mut dok, m, spec.diagonal_increment);
        }
        MatrixKind::Nonsymmetric => {
            let p_int = spec.internal_edges / (nc * (nc - 1)).max(1) as f64;
            for c in 0..s {
                let off = c * nc;
                for i in 0..nc {
                    for j in 0..nc {
                        if i != j && rng.gen::<f64>() < p_int {
                            dok.insert((off + i, off + j), rng.gen());
                        }
                    }
                }
            }
            sample_tie_rows(spec, rng, &mut dok, mc);
            apply_diagonal_rule(&mut dok, m, spec.diagonal_increment);
        }
        MatrixKind::Rectangular => {
            // First n_c rows per cluster form a nonsymmetric square core; the
            // remaining rows draw the same expected edge count per row.
            let per_row = spec.internal_edges / mc as f64;
            for c in 0..s {
                let (row_off, col_off) = (c * mc, c * nc);
                for i in 0..nc {
                    let p = per_row / (nc - 1).max(1) as f64;
                    for j in 0..nc {
                        if i != j && rng.gen::<f64>() < p {
                            dok.insert((row_off + i, col_off + j), rng.gen());
                        }
                    }
                }
                for i in nc..mc {
                    let p = per_row / nc as f64;
                    for j in 0..nc {
                        if rng.gen::<f64>() < p {
                            dok.insert((row_off + i, col_off + j), rng.gen());
                        }
                    }
                }
            }
            sample_tie_rows(spec, rng, &mut dok, mc);
            apply_rectangular_diagonal_rule(&mut dok, spec);
            resample_empty_extra_rows(&mut dok, spec, rng)?;
        }
    }

    // Reject instances whose diagonal rule produced an all-zero row.
    let mut row_nonzero = vec![false; m];
    for (&(r, _), &h) in &dok {
        if h != 0.0 {
            row_nonzero[r] = true;
        }
    }
    if let Some(r) = row_nonzero.iter().position(|&x| !x) {
        return Err(RetryableError::Retry(format!("row {r} is empty")));
    }
    check_determined(&dok, m, n)?;

    let entries: Vec<(usize, usize, f64)> = dok
        .into_iter()
        .filter(|&(_, h)| h != 0.0)
        .map(|((r, c), h)| (r, c, h))
        .collect();

    // z = H x_true + noise, x_true ~ U[0,1)^n, noise_i ~ N(0, v_i).
    let x_true: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let variances: Vec<f64> = (0..m).map(|r| spec.variance_for_row(r)).collect();
    let mut observations = vec![0.0; m];
    for &(r, c, h) in &entries {
        observations[r] += h * x_true[c];
    }
    for (r, z) in observations.iter_mut().enumerate() {
        *z += variances[r].sqrt() * standard_normal(rng);
    }

    LinearModel::new(m, n, entries, observations, variances)
        .map_err(|e| RetryableError::Fatal(e))
}

fn sample_tie_rows(
    spec: &GeneratorSpec,
    rng: &mut ChaCha8Rng,
    dok: &mut BTreeMap<(usize, usize), f64>,
    rows_per_cluster: usize,
) {
    let s = spec.cluster_count;
    if s < 2 {
        return;
    }
    let (mc, nc) = (rows_per_cluster, spec.cols_per_cluster);
    let p_tie = spec.tie_edges / (mc * nc * (s - 1)) as f64;
    for a in 0..s {
        for b in 0..s {
            if a == b {
                continue;
            }
            for i in 0..mc {
                for j in 0..nc {
                    if rng.gen::<f64>() < p_tie {
                        dok.insert((a * mc + i, b * nc + j), rng.gen());
                    }
                }
            }
        }
    }
}

/// `h_ii = sum_{j != i} h_ij + delta`, applied to the assembled global row.
fn apply_diagonal_rule(
    dok: &mut BTreeMap<(usize, usize), f64>,
    dim: usize,
    delta: f64,
) {
    let mut row_sums = vec![0.0; dim];
    for (&(r, c), &h) in dok.iter() {
        if r != c {
            row_sums[r] += h;
        }
    }
    for i in 0..dim {
        let d = row_sums[i] + delta;
        if d != 0.0 {
            dok.insert((i, i), d);
        }
    }
}

fn apply_rectangular_diagonal_rule(dok: &mut BTreeMap<(usize, usize), f64>, spec: &GeneratorSpec) {
    let (mc, nc) = (spec.rows_per_cluster, spec.cols_per_cluster);
    for c in 0..spec.cluster_count {
        for i in 0..nc {
            let row = c * mc + i;
            let col = c * nc + i;
            let sum: f64 = dok
                .range((row, c * nc)..(row, (c + 1) * nc))
                .filter(|&(&(_, cc), _)| cc != col)
                .map(|(_, &h)| h)
                .sum();
            let d = sum + spec.diagonal_increment;
            if d != 0.0 {
                dok.insert((row, col), d);
            }
        }
    }
}

fn resample_empty_extra_rows(
    dok: &mut BTreeMap<(usize, usize), f64>,
    spec: &GeneratorSpec,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<(), RetryableError> {
    let s = spec.cluster_count;
    let (mc, nc) = (spec.rows_per_cluster, spec.cols_per_cluster);
    let per_row_int = spec.internal_edges / mc as f64 / nc as f64;
    let per_row_tie = if s > 1 {
        spec.tie_edges / mc as f64 / (nc * (s - 1)) as f64
    } else {
        0.0
    };
    for c in 0..s {
        for i in nc..mc {
            let row = c * mc + i;
            let mut tries = 0;
            while dok.range((row, 0)..(row, usize::MAX)).next().is_none() {
                if tries >= MAX_ROW_RETRIES {
                    return Err(RetryableError::Fatal(Error::Generation(format!(
                        "row {row} stayed empty after {MAX_ROW_RETRIES} resamples"
                    ))));
                }
                tries += 1;
                for other in 0..s {
                    let p = if other == c { per_row_int } else { per_row_tie };
                    for j in 0..nc {
                        if rng.gen::<f64>() < p {
                            dok.insert((row, other * nc + j), rng.gen());
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// A variable attached to exactly one factor is only valid when that factor is
/// a leaf; otherwise the variable-to-factor message is an empty product.
fn check_determined(
    dok: &BTreeMap<(usize, usize), f64>,
    rows: usize,
    cols: usize,
) -> std::result::Result<(), RetryableError> {
    let mut row_deg = vec![0usize; rows];
    let mut col_rows: Vec<Option<usize>> = vec![None; cols];
    let mut col_deg = vec![0usize; cols];
    for (&(r, c), &h) in dok.iter() {
        if h != 0.0 {
            row_deg[r] += 1;
            col_deg[c] += 1;
            col_rows[c] = Some(r);
        }
    }
    for j in 0..cols {
        match (col_deg[j], col_rows[j]) {
            (0, _) => return Err(RetryableError::Retry(format!("variable {j} unused"))),
            (1, Some(r)) if row_deg[r] > 1 => {
                return Err(RetryableError::Retry(format!(
                    "variable {j} underdetermined"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; the first uniform is bumped away from zero.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One block of a clustered description: local triplets of `H_{c_i,c_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBlock {
    pub row_cluster: usize,
    pub col_cluster: usize,
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

/// Clustered block description of a global model. Blocks not listed are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredBlocks {
    pub row_counts: Vec<usize>,
    pub col_counts: Vec<usize>,
    pub blocks: Vec<MatrixBlock>,
    pub observations: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Stacks a clustered block description into the global model. Row `r` of
/// cluster `c_i` maps to global row `sum_{j<i} m_{c_j} + r`, columns likewise.
pub fn assemble_global(blocks: &ClusteredBlocks) -> Result<LinearModel> {
    let s = blocks.row_counts.len();
    if blocks.col_counts.len() != s {
        return Err(Error::Assembly(format!(
            "{} row clusters but {} column clusters",
            s,
            blocks.col_counts.len()
        )));
    }
    let row_offsets: Vec<usize> = std::iter::once(0)
        .chain(blocks.row_counts.iter().scan(0, |acc, &m| {
            *acc += m;
            Some(*acc)
        }))
        .collect();
    let col_offsets: Vec<usize> = std::iter::once(0)
        .chain(blocks.col_counts.iter().scan(0, |acc, &n| {
            *acc += n;
            Some(*acc)
        }))
        .collect();
    let (m, n) = (row_offsets[s], col_offsets[s]);

    let mut entries = Vec::new();
    for block in &blocks.blocks {
        let (ci, cj) = (block.row_cluster, block.col_cluster);
        if ci >= s || cj >= s {
            return Err(Error::Assembly(format!(
                "block ({ci}, {cj}) references a cluster outside 0..{s}"
            )));
        }
        if block.rows != blocks.row_counts[ci] {
            return Err(Error::Assembly(format!(
                "block ({ci}, {cj}) has {} rows, cluster {ci} expects {}",
                block.rows, blocks.row_counts[ci]
            )));
        }
        if block.cols != blocks.col_counts[cj] {
            return Err(Error::Assembly(format!(
                "block ({ci}, {cj}) has {} cols, cluster {cj} expects {}",
                block.cols, blocks.col_counts[cj]
            )));
        }
        for &(r, c, h) in &block.entries {
            if r >= block.rows || c >= block.cols {
                return Err(Error::Assembly(format!(
                    "block ({ci}, {cj}) entry ({r}, {c}) is outside its {}x{} extent",
                    block.rows, block.cols
                )));
            }
            if h != 0.0 {
                entries.push((row_offsets[ci] + r, col_offsets[cj] + c, h));
            }
        }
    }
    LinearModel::new(m, n, entries, blocks.observations.clone(), blocks.variances.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> GeneratorSpec {
        GeneratorSpec {
            cluster_count: 2,
            rows_per_cluster: 100,
            cols_per_cluster: 100,
            internal_edges: 600.0,
            tie_edges: 5.0,
            kind: MatrixKind::Symmetric,
            diagonal_increment: 0.01,
            variances: VarianceScheme::Uniform(1.0),
            seed: 7,
        }
    }

    #[test]
    fn symmetric_baseline_counts_and_dominance() {
        let (model, partition) = generate_model(&base_spec()).unwrap();
        assert_eq!(model.rows(), 200);
        assert_eq!(model.cols(), 200);
        assert_eq!(partition.cluster_count(), 2);

        let mut internal = 0usize;
        let mut tie = 0usize;
        let mut row_sums = vec![0.0; 200];
        let mut diag = vec![0.0; 200];
        for &(r, c, h) in model.entries() {
            if r == c {
                diag[r] = h;
            } else {
                row_sums[r] += h.abs();
                if r / 100 == c / 100 {
                    internal += 1;
                } else {
                    tie += 1;
                }
            }
        }
        // ~1200 internal and ~10 tie nonzeros off the diagonals.
        assert!((900..1500).contains(&internal), "internal = {internal}");
        assert!(tie <= 40, "tie = {tie}");
        // Diagonal dominates the global row by exactly delta.
        for r in 0..200 {
            let margin = diag[r] - row_sums[r];
            assert!((margin - 0.01).abs() < 1e-12, "row {r} margin {margin}");
        }
    }

    #[test]
    fn symmetric_entry_set_is_symmetric() {
        let (model, _) = generate_model(&base_spec()).unwrap();
        let set: std::collections::HashMap<(usize, usize), f64> = model
            .entries()
            .iter()
            .map(|&(r, c, h)| ((r, c), h))
            .collect();
        for (&(r, c), &h) in &set {
            assert_eq!(set.get(&(c, r)), Some(&h));
        }
    }

    #[test]
    fn degenerate_single_variable() {
        let spec = GeneratorSpec {
            cluster_count: 1,
            rows_per_cluster: 1,
            cols_per_cluster: 1,
            internal_edges: 0.0,
            tie_edges: 0.0,
            kind: MatrixKind::Symmetric,
            diagonal_increment: 2.0,
            variances: VarianceScheme::Uniform(1.0),
            seed: 1,
        };
        let (model, _) = generate_model(&spec).unwrap();
        assert_eq!(model.entries(), &[(0, 0, 2.0)]);
    }

    #[test]
    fn rectangular_dimensions_and_core() {
        let spec = GeneratorSpec {
            cluster_count: 2,
            rows_per_cluster: 120,
            cols_per_cluster: 100,
            internal_edges: 6.0 * 120.0,
            tie_edges: 0.05 * 120.0,
            kind: MatrixKind::Rectangular,
            diagonal_increment: 0.01,
            variances: VarianceScheme::Split {
                independent: 1e-8,
                dependent: 1e-1,
            },
            seed: 11,
        };
        let (model, _) = generate_model(&spec).unwrap();
        assert_eq!(model.rows(), 240);
        assert_eq!(model.cols(), 200);
        // Core rows carry the small variance, extra rows the large one.
        assert_eq!(model.variances()[0], 1e-8);
        assert_eq!(model.variances()[100], 1e-1);
        assert_eq!(model.variances()[120], 1e-8);
        assert_eq!(model.variances()[239], 1e-1);
        // Core diagonals exist.
        let has = |r: usize, c: usize| model.entries().iter().any(|&(rr, cc, _)| (rr, cc) == (r, c));
        assert!(has(0, 0));
        assert!(has(120, 100));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = base_spec();
        let a = generate_model(&spec).unwrap();
        let b = generate_model(&spec).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn mean_internal_count_tracks_expectation() {
        // Law of large numbers check over repeated generations.
        let mut total = 0usize;
        let reps = 200;
        for seed in 0..reps {
            let spec = GeneratorSpec {
                seed,
                rows_per_cluster: 40,
                cols_per_cluster: 40,
                internal_edges: 120.0,
                ..base_spec()
            };
            let (model, _) = generate_model(&spec).unwrap();
            total += model
                .entries()
                .iter()
                .filter(|&&(r, c, _)| r != c && r / 40 == c / 40)
                .count();
        }
        let mean_per_cluster = total as f64 / (2 * reps) as f64;
        assert!(
            (mean_per_cluster - 120.0).abs() / 120.0 < 0.05,
            "mean internal count per cluster = {mean_per_cluster}"
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = base_spec();
        spec.kind = MatrixKind::Rectangular;
        assert!(generate_model(&spec).is_err());

        let mut spec = base_spec();
        spec.internal_edges = 1e9;
        assert!(generate_model(&spec).is_err());

        let mut spec = base_spec();
        spec.variances = VarianceScheme::Uniform(0.0);
        assert!(generate_model(&spec).is_err());
    }

    #[test]
    fn assemble_block_diagonal() {
        let blocks = ClusteredBlocks {
            row_counts: vec![1, 1],
            col_counts: vec![1, 1],
            blocks: vec![
                MatrixBlock {
                    row_cluster: 0,
                    col_cluster: 0,
                    rows: 1,
                    cols: 1,
                    entries: vec![(0, 0, 2.0)],
                },
                MatrixBlock {
                    row_cluster: 1,
                    col_cluster: 1,
                    rows: 1,
                    cols: 1,
                    entries: vec![(0, 0, 3.0)],
                },
            ],
            observations: vec![1.0, 1.0],
            variances: vec![1.0, 1.0],
        };
        let model = assemble_global(&blocks).unwrap();
        assert_eq!(model.entries(), &[(0, 0, 2.0), (1, 1, 3.0)]);
    }

    #[test]
    fn assemble_with_tie_block() {
        let blocks = ClusteredBlocks {
            row_counts: vec![1, 1],
            col_counts: vec![1, 1],
            blocks: vec![
                MatrixBlock {
                    row_cluster: 0,
                    col_cluster: 0,
                    rows: 1,
                    cols: 1,
                    entries: vec![(0, 0, 2.0)],
                },
                MatrixBlock {
                    row_cluster: 0,
                    col_cluster: 1,
                    rows: 1,
                    cols: 1,
                    entries: vec![(0, 0, 1.0)],
                },
                MatrixBlock {
                    row_cluster: 1,
                    col_cluster: 1,
                    rows: 1,
                    cols: 1,
                    entries: vec![(0, 0, 3.0)],
                },
                MatrixBlock {
                    row_cluster: 1,
                    col_cluster: 0,
                    rows: 1,
                    cols: 1,
                    entries: vec![(0, 0, 0.0)],
                },
            ],
            observations: vec![1.0, 1.0],
            variances: vec![1.0, 1.0],
        };
        let model = assemble_global(&blocks).unwrap();
        assert_eq!(model.entries(), &[(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0)]);
    }

    #[test]
    fn assemble_rejects_mismatched_block() {
        let blocks = ClusteredBlocks {
            row_counts: vec![1, 1],
            col_counts: vec![1, 1],
            blocks: vec![MatrixBlock {
                row_cluster: 0,
                col_cluster: 1,
                rows: 2,
                cols: 1,
                entries: vec![],
            }],
            observations: vec![1.0, 1.0],
            variances: vec![1.0, 1.0],
        };
        let err = assemble_global(&blocks).unwrap_err();
        assert!(err.to_string().contains("block (0, 1)"), "{err}");
    }

    #[test]
    fn model_invariants_enforced() {
        assert!(LinearModel::new(
            1,
            1,
            vec![(0, 0, 1.0), (0, 0, 2.0)],
            vec![0.0],
            vec![1.0]
        )
        .is_err());
        assert!(LinearModel::new(2, 1, vec![(0, 0, 1.0)], vec![0.0; 2], vec![1.0; 2]).is_err());
        assert!(LinearModel::new(1, 1, vec![(0, 0, 1.0)], vec![0.0], vec![0.0]).is_err());
    }
}
