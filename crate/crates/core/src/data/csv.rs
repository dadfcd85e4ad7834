use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adjacency, TrafficDataset, WindowSpec};
use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyFormat {
    /// `N x N` numeric matrix, nonzero meaning an edge.
    #[default]
    Dense,
    /// `src,dst,weight` rows with 0-based node ids.
    EdgeList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub spec: WindowSpec,
    /// Whether the speeds file starts with a header row.
    pub header: bool,
    pub adjacency_format: AdjacencyFormat,
}

type Rows = Vec<(usize, Vec<String>)>;

fn read_rows(path: &Path) -> Result<Rows, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv {
            path: path.to_path_buf(),
            row: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

fn parse_cell(path: &Path, row: usize, column: usize, cell: &str) -> Result<f64, DataError> {
    let cell_error = |message: String| DataError::Cell {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    if cell.is_empty() {
        return Err(cell_error("missing value".into()));
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| cell_error(format!("non-numeric cell {cell:?}")))?;
    if !v.is_finite() {
        return Err(cell_error(format!("non-finite value {cell:?}")));
    }
    Ok(v)
}

fn looks_numeric(row: &[String]) -> bool {
    row.iter().all(|c| c.parse::<f64>().is_ok())
}

/// Loads a speed matrix (rows = time steps, columns = nodes) and its adjacency.
///
/// Adjacency weights are binarized (nonzero means an edge) and the raw values
/// retained on the dataset. A leading non-numeric row in the adjacency file is
/// treated as a header.
pub fn load_csv(
    speeds_path: impl AsRef<Path>,
    adjacency_path: impl AsRef<Path>,
    options: CsvOptions,
) -> Result<TrafficDataset, DataError> {
    let speeds_path = speeds_path.as_ref().to_path_buf();
    let adjacency_path = adjacency_path.as_ref().to_path_buf();

    let mut rows = read_rows(&speeds_path)?;
    if options.header && !rows.is_empty() {
        rows.remove(0);
    }
    let node_count = rows.first().map_or(0, |(_, r)| r.len());
    if node_count == 0 {
        return Err(DataError::NoNodes);
    }
    let mut speeds = Vec::with_capacity(rows.len() * node_count);
    for (line, row) in &rows {
        if row.len() != node_count {
            return Err(DataError::Cell {
                path: speeds_path.clone(),
                row: *line,
                column: row.len().min(node_count) + 1,
                message: format!("expected {node_count} columns, found {}", row.len()),
            });
        }
        for (c, cell) in row.iter().enumerate() {
            let v = parse_cell(&speeds_path, *line, c + 1, cell)?;
            if v < 0.0 {
                return Err(DataError::Cell {
                    path: speeds_path.clone(),
                    row: *line,
                    column: c + 1,
                    message: format!("negative speed {v}"),
                });
            }
            speeds.push(v);
        }
    }
    let time_count = rows.len();

    let mut adj_rows = read_rows(&adjacency_path)?;
    if adj_rows.first().is_some_and(|(_, r)| !looks_numeric(r)) {
        adj_rows.remove(0);
    }
    let (adjacency, weights) = match options.adjacency_format {
        AdjacencyFormat::Dense => dense_adjacency(&adjacency_path, &adj_rows, node_count)?,
        AdjacencyFormat::EdgeList => edge_list_adjacency(&adjacency_path, &adj_rows, node_count)?,
    };

    Ok(TrafficDataset::new(speeds, time_count, node_count, adjacency, options.spec)?
        .with_raw_weights(weights))
}

fn dense_adjacency(path: &Path, rows: &Rows, n: usize) -> Result<(Adjacency, Vec<f64>), DataError> {
    if rows.len() != n {
        return Err(DataError::Dimension(format!(
            "speeds have {n} columns but adjacency has {} rows",
            rows.len()
        )));
    }
    let mut weights = Vec::with_capacity(n * n);
    for (line, row) in rows {
        if row.len() != n {
            return Err(DataError::Dimension(format!(
                "adjacency row at line {line} has {} columns, expected {n}",
                row.len()
            )));
        }
        for (c, cell) in row.iter().enumerate() {
            weights.push(parse_cell(path, *line, c + 1, cell)?);
        }
    }
    let edges = weights.iter().map(|w| *w != 0.0).collect();
    Ok((Adjacency::from_rows(n, edges)?, weights))
}

fn edge_list_adjacency(path: &Path, rows: &Rows, n: usize) -> Result<(Adjacency, Vec<f64>), DataError> {
    let mut adj = Adjacency::empty(n);
    let mut weights = vec![0.0; n * n];
    for (line, row) in rows {
        if row.len() != 3 {
            return Err(DataError::Cell {
                path: path.to_path_buf(),
                row: *line,
                column: row.len().min(3) + 1,
                message: format!("edge list rows need 3 fields, found {}", row.len()),
            });
        }
        let id = |c: usize| -> Result<usize, DataError> {
            let v = row[c].parse::<usize>().map_err(|_| DataError::Cell {
                path: path.to_path_buf(),
                row: *line,
                column: c + 1,
                message: format!("node id {:?} is not a nonnegative integer", row[c]),
            })?;
            if v >= n {
                return Err(DataError::Dimension(format!(
                    "edge at line {line} references node {v} but speeds have {n} columns"
                )));
            }
            Ok(v)
        };
        let (src, dst) = (id(0)?, id(1)?);
        let w = parse_cell(path, *line, 3, &row[2])?;
        weights[src * n + dst] = w;
        adj.set(src, dst, w != 0.0);
    }
    Ok((adj, weights))
}
