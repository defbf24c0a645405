//! Matrix Market and CSV serialization for models, partitions and events.
//!
//! The coefficient matrix travels as `%%MatrixMarket matrix coordinate real
//! general` (1-based indices), observations as a CSV with header `row,z,v`,
//! partitions as `variable,cluster`. Coefficients are written with 17
//! significant digits so that load(save(m)) == m exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ClusterPartition, LinearModel};

const MM_HEADER: &str = "%%MatrixMarket matrix coordinate real general";

/// Formats a float with 17 significant digits (round-trips f64 exactly).
pub fn format_full(x: f64) -> String {
    format!("{x:.16e}")
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads a model from a Matrix Market file plus a `row,z,v` CSV.
pub fn load_model(matrix_path: &Path, observations_path: &Path) -> Result<LinearModel> {
    let (rows, cols, entries) = read_matrix_market(matrix_path)?;
    let mut observations = vec![None; rows];
    let mut variances = vec![0.0; rows];

    let reader = open(observations_path)?;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(observations_path))?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 {
            if trimmed != "row,z,v" {
                return Err(parse_err(
                    observations_path,
                    lineno,
                    format!("expected header 'row,z,v', got '{trimmed}'"),
                ));
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                observations_path,
                lineno,
                "expected three comma-separated fields",
            ));
        }
        let row: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(observations_path, lineno, "bad row index"))?;
        let z: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(observations_path, lineno, "bad observation value"))?;
        let v: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(observations_path, lineno, "bad variance value"))?;
        if row >= rows {
            return Err(parse_err(
                observations_path,
                lineno,
                format!("row index {row} out of range for {rows} rows"),
            ));
        }
        if !(v > 0.0) {
            return Err(parse_err(
                observations_path,
                lineno,
                format!("variance must be positive, got {v}"),
            ));
        }
        if observations[row].is_some() {
            return Err(parse_err(
                observations_path,
                lineno,
                format!("duplicate observation for row {row}"),
            ));
        }
        observations[row] = Some(z);
        variances[row] = v;
    }
    let observations: Vec<f64> = observations
        .into_iter()
        .enumerate()
        .map(|(r, z)| {
            z.ok_or_else(|| parse_err(observations_path, 0, format!("row {r} has no observation")))
        })
        .collect::<Result<_>>()?;
    LinearModel::new(rows, cols, entries, observations, variances)
}

fn read_matrix_market(path: &Path) -> Result<(usize, usize, Vec<(usize, usize, f64)>)> {
    let reader = open(path)?;
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut header_checked = false;

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if !header_checked {
            if !trimmed.starts_with("%%MatrixMarket") {
                return Err(parse_err(path, lineno, "missing MatrixMarket banner"));
            }
            let lower = trimmed.to_ascii_lowercase();
            if !lower.contains("coordinate") || !lower.contains("real") || !lower.contains("general")
            {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("unsupported format '{trimmed}', expected '{MM_HEADER}'"),
                ));
            }
            header_checked = true;
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match dims {
            None => {
                if fields.len() != 3 {
                    return Err(parse_err(path, lineno, "expected 'rows cols nnz'"));
                }
                let m: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad row count"))?;
                let n: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad column count"))?;
                let nnz: usize = fields[2]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad nonzero count"))?;
                dims = Some((m, n, nnz));
            }
            Some((m, n, _)) => {
                if fields.len() != 3 {
                    return Err(parse_err(path, lineno, "expected 'row col value'"));
                }
                let r: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad row index"))?;
                let c: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad column index"))?;
                let h: f64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad value"))?;
                if r == 0 || c == 0 || r > m || c > n {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("index ({r}, {c}) out of range for {m}x{n} (1-based)"),
                    ));
                }
                if !seen.insert((r, c)) {
                    return Err(parse_err(path, lineno, format!("duplicate entry ({r}, {c})")));
                }
                entries.push((r - 1, c - 1, h));
            }
        }
    }
    let (m, n, nnz) = dims.ok_or_else(|| parse_err(path, 0, "missing size line"))?;
    if entries.len() != nnz {
        return Err(parse_err(
            path,
            0,
            format!("size line declared {nnz} entries, found {}", entries.len()),
        ));
    }
    Ok((m, n, entries))
}

/// Saves the coefficient matrix and observations of a model.
pub fn save_model(model: &LinearModel, matrix_path: &Path, observations_path: &Path) -> Result<()> {
    let mut out = create(matrix_path)?;
    writeln!(out, "{MM_HEADER}").map_err(io_err(matrix_path))?;
    writeln!(
        out,
        "{} {} {}",
        model.rows(),
        model.cols(),
        model.entries().len()
    )
    .map_err(io_err(matrix_path))?;
    for &(r, c, h) in model.entries() {
        writeln!(out, "{} {} {}", r + 1, c + 1, format_full(h)).map_err(io_err(matrix_path))?;
    }
    out.flush().map_err(io_err(matrix_path))?;

    let mut out = create(observations_path)?;
    writeln!(out, "row,z,v").map_err(io_err(observations_path))?;
    for r in 0..model.rows() {
        writeln!(
            out,
            "{r},{},{}",
            format_full(model.observations()[r]),
            format_full(model.variances()[r])
        )
        .map_err(io_err(observations_path))?;
    }
    out.flush().map_err(io_err(observations_path))
}

/// Saves a partition as CSV `variable,cluster`.
pub fn save_partition(partition: &ClusterPartition, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "variable,cluster").map_err(io_err(path))?;
    for (j, &c) in partition.assignment().iter().enumerate() {
        writeln!(out, "{j},{c}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Loads a partition from CSV `variable,cluster`.
pub fn load_partition(path: &Path) -> Result<ClusterPartition> {
    let reader = open(path)?;
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 {
            if trimmed != "variable,cluster" {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected header 'variable,cluster', got '{trimmed}'"),
                ));
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 2 {
            return Err(parse_err(path, lineno, "expected two comma-separated fields"));
        }
        let variable: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, "bad variable index"))?;
        let cluster: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, "bad cluster id"))?;
        pairs.push((variable, cluster));
    }
    pairs.sort_unstable();
    for (expected, &(variable, _)) in pairs.iter().enumerate() {
        if variable != expected {
            return Err(parse_err(
                path,
                0,
                format!("variable indices must cover 0..n without gaps, missing {expected}"),
            ));
        }
    }
    let assignment: Vec<usize> = pairs.into_iter().map(|(_, c)| c).collect();
    let cluster_count = assignment.iter().copied().max().map_or(0, |c| c + 1);
    ClusterPartition::new(cluster_count, assignment)
}
