use crate::error::DataError;

/// Dense boolean adjacency; `get(m, n)` is true iff the edge `m -> n` exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    edges: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: vec![false; n * n],
        }
    }

    pub fn self_loops(n: usize) -> Self {
        let mut a = Self::empty(n);
        for i in 0..n {
            a.set(i, i, true);
        }
        a
    }

    pub fn complete(n: usize) -> Self {
        Self {
            n,
            edges: vec![true; n * n],
        }
    }

    /// Builds from a row-major `n x n` slice.
    pub fn from_rows(n: usize, edges: Vec<bool>) -> Result<Self, DataError> {
        if edges.len() != n * n {
            return Err(DataError::Dimension(format!(
                "adjacency with {} entries is not {n}x{n}",
                edges.len()
            )));
        }
        Ok(Self { n, edges })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, from: usize, to: usize) -> bool {
        self.edges[from * self.n + to]
    }

    pub fn set(&mut self, from: usize, to: usize, value: bool) {
        self.edges[from * self.n + to] = value;
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }
}

/// Pairwise Euclidean distances of planar points, row-major.
pub fn distances_from_coordinates(points: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() * points.len());
    for a in points {
        for b in points {
            out.push(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
        }
    }
    out
}

/// Thresholded Gaussian kernel over a row-major distance matrix.
///
/// Edge `(m, n)` exists iff `exp(-d(m,n)^2 / sigma^2) >= threshold`, where
/// sigma is the population standard deviation of all `n^2` entries. The
/// diagonal is always set.
pub fn gaussian_threshold_adjacency(distances: &[f64], threshold: f64) -> Result<Adjacency, DataError> {
    if distances.is_empty() {
        return Err(DataError::Invalid("empty distance matrix".into()));
    }
    let n = (distances.len() as f64).sqrt().round() as usize;
    if n * n != distances.len() {
        return Err(DataError::Dimension(format!(
            "{} distances do not form a square matrix",
            distances.len()
        )));
    }
    if let Some(d) = distances.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(DataError::Invalid(format!("distance {d} is not a nonnegative number")));
    }
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / distances.len() as f64;
    let mut adj = Adjacency::self_loops(n);
    for m in 0..n {
        for k in 0..n {
            if m == k {
                continue;
            }
            let d = distances[m * n + k];
            let w = if var > 0.0 {
                (-d * d / var).exp()
            } else if d == 0.0 {
                1.0
            } else {
                0.0
            };
            if w >= threshold {
                adj.set(m, k, true);
            }
        }
    }
    Ok(adj)
}
