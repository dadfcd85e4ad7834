//! Server-side aggregation by parameter-free graph convolution.
//!
//! Each round the participants form the induced subgraph of the sensor graph,
//! extended with a virtual node that carries the previous global model. Every
//! participant (and the virtual node itself) has an edge into the virtual
//! node. With `M = D^{-1/2} A D^{-1/2}` (D = indegrees), the aggregation weight
//! of node `i` is entry `(i, virtual)` of `M^k`, normalized to sum to one.

use crate::data::Adjacency;
use crate::error::GraphError;
use crate::gru::ModelParams;

/// Round graph over participants plus the virtual node (last index).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantGraph {
    participants: Vec<usize>,
    adjacency: Adjacency,
    indegree: Vec<usize>,
}

impl ParticipantGraph {
    /// Builds the augmented graph; participants are sorted ascending and
    /// self-loops are always present.
    pub fn build(full: &Adjacency, participants: &[usize]) -> Result<Self, GraphError> {
        if participants.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut ids = participants.to_vec();
        ids.sort_unstable();
        for pair in ids.windows(2) {
            if pair[0] == pair[1] {
                return Err(GraphError::Duplicate(pair[0]));
            }
        }
        if let Some(&index) = ids.iter().find(|&&i| i >= full.len()) {
            return Err(GraphError::OutOfRange {
                index,
                nodes: full.len(),
            });
        }
        let n = ids.len();
        let mut adjacency = Adjacency::empty(n + 1);
        for (i, &a) in ids.iter().enumerate() {
            for (j, &b) in ids.iter().enumerate() {
                adjacency.set(i, j, i == j || full.get(a, b));
            }
        }
        for i in 0..=n {
            adjacency.set(i, n, true);
        }
        let indegree = (0..=n)
            .map(|j| (0..=n).filter(|&i| adjacency.get(i, j)).count())
            .collect();
        Ok(Self {
            participants: ids,
            adjacency,
            indegree,
        })
    }

    pub fn participants(&self) -> &[usize] {
        &self.participants
    }

    /// Node count including the virtual node.
    pub fn size(&self) -> usize {
        self.participants.len() + 1
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn indegree(&self) -> &[usize] {
        &self.indegree
    }

    /// Dense convolution operator `M`, row-major.
    pub fn convolution_operator(&self) -> Vec<f64> {
        let n = self.size();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if self.adjacency.get(i, j) {
                    m[i * n + j] = 1.0 / ((self.indegree[i] * self.indegree[j]) as f64).sqrt();
                }
            }
        }
        m
    }

    /// Normalized two-layer weights.
    pub fn aggregation_weights(&self) -> AggregationWeights {
        self.aggregation_weights_k(2)
    }

    /// Weights from `k` convolution layers; `k = 0` is uniform averaging over
    /// the locals and the previous global model.
    ///
    /// Computes the last column of `M^k` as `k` matrix-vector products.
    pub fn aggregation_weights_k(&self, layers: usize) -> AggregationWeights {
        let n = self.size();
        if layers == 0 {
            return AggregationWeights(vec![1.0 / n as f64; n]);
        }
        let m = self.convolution_operator();
        let mut col: Vec<f64> = (0..n).map(|i| m[i * n + n - 1]).collect();
        for _ in 1..layers {
            col = (0..n)
                .map(|i| (0..n).map(|k| m[i * n + k] * col[k]).sum())
                .collect();
        }
        let sum: f64 = col.iter().sum();
        AggregationWeights(col.into_iter().map(|v| v / sum).collect())
    }
}

/// Normalized weights; the last entry belongs to the previous global model.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights(pub Vec<f64>);

impl AggregationWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }
}

/// `sum_i v_i * local_i + v_last * global`, accumulated in participant order
/// with the global term last.
pub fn aggregate(
    global: &ModelParams,
    locals: &[ModelParams],
    weights: &AggregationWeights,
) -> Result<ModelParams, GraphError> {
    let w = weights.as_slice();
    if w.len() != locals.len() + 1 {
        return Err(GraphError::WeightCount {
            expected: locals.len() + 1,
            got: w.len(),
        });
    }
    for local in locals {
        global.same_shape(local)?;
    }
    let mut out = ModelParams::zeros(global.hidden(), global.forecast());
    for (local, &v) in locals.iter().zip(w) {
        out.axpy(v, local);
    }
    out.axpy(w[locals.len()], global);
    Ok(out)
}

/// Plain mean of the uploaded models.
pub fn average(locals: &[ModelParams]) -> Result<ModelParams, GraphError> {
    let first = locals.first().ok_or(GraphError::Empty)?;
    for local in locals {
        first.same_shape(local)?;
    }
    let mut out = ModelParams::zeros(first.hidden(), first.forecast());
    let v = 1.0 / locals.len() as f64;
    for local in locals {
        out.axpy(v, local);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense `D^{-1/2} A D^{-1/2}` then a full matrix square.
    fn dense_square_oracle(g: &ParticipantGraph) -> Vec<f64> {
        let n = g.size();
        let a: Vec<f64> = (0..n * n)
            .map(|e| if g.adjacency().get(e / n, e % n) { 1.0 } else { 0.0 })
            .collect();
        let d: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| a[i * n + j]).sum::<f64>())
            .collect();
        let mut dinv = vec![0.0; n * n];
        for i in 0..n {
            dinv[i * n + i] = 1.0 / d[i].sqrt();
        }
        let mul = |x: &[f64], y: &[f64]| {
            let mut z = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        z[i * n + j] += x[i * n + k] * y[k * n + j];
                    }
                }
            }
            z
        };
        let m = mul(&mul(&dinv, &a), &dinv);
        mul(&m, &m)
    }

    #[test]
    fn single_participant() {
        let full = Adjacency::empty(3);
        let g = ParticipantGraph::build(&full, &[1]).unwrap();
        assert!(g.adjacency().get(0, 0) && g.adjacency().get(0, 1) && g.adjacency().get(1, 1));
        assert!(!g.adjacency().get(1, 0));
        assert_eq!(g.indegree(), &[1, 2]);

        let m = g.convolution_operator();
        let r2 = 2f64.sqrt();
        assert_eq!(m, vec![1.0, 1.0 / r2, 0.0, 0.5]);

        let raw = [3.0 / (2.0 * r2), 0.25];
        let sum = raw[0] + raw[1];
        let w = g.aggregation_weights();
        assert!((w.0[0] - raw[0] / sum).abs() < 1e-15);
        assert!((w.0[0] - 0.8093).abs() < 1e-4 && (w.0[1] - 0.1907).abs() < 1e-4);

        let w1 = g.aggregation_weights_k(1);
        assert!((w1.0[0] - 0.5858).abs() < 1e-4 && (w1.0[1] - 0.4142).abs() < 1e-4);
    }

    #[test]
    fn two_isolated_participants() {
        let g = ParticipantGraph::build(&Adjacency::empty(4), &[3, 0]).unwrap();
        assert_eq!(g.participants(), &[0, 3]);
        assert_eq!(g.indegree(), &[1, 1, 3]);
        let raw = 4.0 / (3.0 * 3f64.sqrt());
        let sum = 2.0 * raw + 1.0 / 9.0;
        let w = g.aggregation_weights();
        assert!((w.0[0] - raw / sum).abs() < 1e-15);
        assert_eq!(w.0[0], w.0[1]);
        assert!((w.0[0] - 0.4663).abs() < 1e-4 && (w.0[2] - 0.0673).abs() < 1e-4);
    }

    #[test]
    fn directed_chain_indegrees() {
        let mut full = Adjacency::empty(3);
        full.set(0, 1, true);
        full.set(1, 2, true);
        let g = ParticipantGraph::build(&full, &[0, 1, 2]).unwrap();
        assert_eq!(g.indegree(), &[1, 2, 2, 4]);
    }

    #[test]
    fn rejects_bad_participant_sets() {
        let full = Adjacency::empty(3);
        assert_eq!(ParticipantGraph::build(&full, &[]), Err(GraphError::Empty));
        assert_eq!(ParticipantGraph::build(&full, &[1, 1]), Err(GraphError::Duplicate(1)));
        assert!(matches!(
            ParticipantGraph::build(&full, &[3]),
            Err(GraphError::OutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn operator_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(1..=10);
            let mut full = Adjacency::empty(n);
            for i in 0..n {
                for j in 0..n {
                    full.set(i, j, rng.random::<f64>() < 0.4);
                }
            }
            let ids: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < 0.7).collect();
            if ids.is_empty() {
                continue;
            }
            let g = ParticipantGraph::build(&full, &ids).unwrap();
            let size = g.size();
            let sq = dense_square_oracle(&g);
            let col: Vec<f64> = (0..size).map(|i| sq[i * size + size - 1]).collect();
            let total: f64 = col.iter().sum();
            let w = g.aggregation_weights();
            for (a, b) in w.0.iter().zip(&col) {
                assert!((a - b / total).abs() < 1e-12);
            }
            assert!(g.convolution_operator().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn uniform_weights_at_zero_layers() {
        let g = ParticipantGraph::build(&Adjacency::complete(5), &[0, 2, 4]).unwrap();
        assert_eq!(g.aggregation_weights_k(0).0, vec![0.25; 4]);
        assert_eq!(g.aggregation_weights_k(2), g.aggregation_weights());
    }

    fn random_model(rng: &mut ChaCha8Rng) -> ModelParams {
        let mut p = ModelParams::zeros(2, 1);
        for v in p.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn aggregate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_model(&mut rng);
        let same = vec![g.clone(); 3];
        let w = AggregationWeights(vec![0.1, 0.2, 0.3, 0.4]);
        let out = aggregate(&g, &same, &w).unwrap();
        for (a, b) in out.as_slice().iter().zip(g.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }

        let locals: Vec<ModelParams> = (0..3).map(|_| random_model(&mut rng)).collect();
        let pick = AggregationWeights(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(aggregate(&g, &locals, &pick).unwrap(), locals[0]);

        let out = aggregate(&g, &locals, &w).unwrap();
        for i in 0..g.len() {
            let mut want = 0.0;
            for (l, v) in locals.iter().zip(&w.0) {
                want += v * l.as_slice()[i];
            }
            want += w.0[3] * g.as_slice()[i];
            assert!((out.as_slice()[i] - want).abs() < 1e-12);
        }

        assert!(aggregate(&g, &locals, &AggregationWeights(vec![1.0])).is_err());
        assert!(aggregate(&g, &[ModelParams::zeros(3, 1)], &AggregationWeights(vec![0.5, 0.5])).is_err());
    }

    #[test]
    fn average_is_mean() {
        let mut a = ModelParams::zeros(1, 1);
        a.as_mut_slice().fill(1.0);
        let mut b = ModelParams::zeros(1, 1);
        b.as_mut_slice().fill(3.0);
        assert!(average(&[a, b]).unwrap().as_slice().iter().all(|&v| v == 2.0));
        assert_eq!(average(&[]), Err(GraphError::Empty));
    }
}
