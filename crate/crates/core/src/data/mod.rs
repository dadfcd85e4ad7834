//! Traffic datasets: storage, sliding windows, temporal splits, and scaling.
//!
//! Time is 1-indexed throughout. A dataset with `time_count` steps, history
//! `H` and forecast `F` admits rounds `H ..= time_count - F`; the window of
//! round `t` reads `s[t-H+1 ..= t]` as input and `s[t+1 ..= t+F]` as target.

mod adjacency;
mod csv;
mod synth;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use self::adjacency::{distances_from_coordinates, gaussian_threshold_adjacency, Adjacency};
pub use self::csv::{load_csv, AdjacencyFormat, CsvOptions};
pub use self::synth::{synthesize_drift, SynthSpec};
use crate::error::DataError;

/// Horizon and seasonality parameters attached to a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub history: usize,
    pub forecast: usize,
    /// Time steps per seasonal cycle.
    pub periodicity: usize,
}

impl WindowSpec {
    pub fn new(history: usize, forecast: usize, periodicity: usize) -> Self {
        Self {
            history,
            forecast,
            periodicity,
        }
    }
}

/// Node-major view of a speed matrix plus the directed sensor graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficDataset {
    /// Row-major `[time][node]`.
    speeds: Vec<f64>,
    node_count: usize,
    time_count: usize,
    adjacency: Adjacency,
    /// Raw edge weights as loaded, kept for provenance only.
    raw_weights: Option<Vec<f64>>,
    spec: WindowSpec,
}

/// One sliding-window sample for a node at a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub node: usize,
    pub round: usize,
}

/// Contiguous partition of the admissible rounds, in temporal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl RoundSplit {
    /// Rounds preceding the test segment.
    pub fn warmup(&self) -> Range<usize> {
        self.train.start..self.validation.end
    }
}

impl TrafficDataset {
    pub fn new(
        speeds: Vec<f64>,
        time_count: usize,
        node_count: usize,
        adjacency: Adjacency,
        spec: WindowSpec,
    ) -> Result<Self, DataError> {
        if node_count == 0 {
            return Err(DataError::NoNodes);
        }
        if speeds.len() != time_count * node_count {
            return Err(DataError::Dimension(format!(
                "{} values for {time_count} steps x {node_count} nodes",
                speeds.len()
            )));
        }
        if adjacency.len() != node_count {
            return Err(DataError::Dimension(format!(
                "speeds have {node_count} columns but adjacency is {0}x{0}",
                adjacency.len()
            )));
        }
        for (i, &v) in speeds.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(DataError::Invalid(format!(
                    "speed at time {}, node {} is {v}",
                    i / node_count + 1,
                    i % node_count
                )));
            }
        }
        if spec.history == 0 || spec.forecast == 0 || spec.periodicity == 0 {
            return Err(DataError::Windowing(
                "history, forecast and periodicity must be positive".into(),
            ));
        }
        if spec.history + spec.forecast > time_count {
            return Err(DataError::Windowing(format!(
                "H + F = {} exceeds {time_count} time steps",
                spec.history + spec.forecast
            )));
        }
        Ok(Self {
            speeds,
            node_count,
            time_count,
            adjacency,
            raw_weights: None,
            spec,
        })
    }

    pub(crate) fn with_raw_weights(mut self, weights: Vec<f64>) -> Self {
        self.raw_weights = Some(weights);
        self
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn time_count(&self) -> usize {
        self.time_count
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn raw_weights(&self) -> Option<&[f64]> {
        self.raw_weights.as_deref()
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn history(&self) -> usize {
        self.spec.history
    }

    pub fn forecast(&self) -> usize {
        self.spec.forecast
    }

    pub fn periodicity(&self) -> usize {
        self.spec.periodicity
    }

    /// Speed at 1-indexed `time` for `node`.
    pub fn speed(&self, time: usize, node: usize) -> f64 {
        self.speeds[(time - 1) * self.node_count + node]
    }

    /// Full series of one node, index 0 holding time 1.
    pub fn series(&self, node: usize) -> Vec<f64> {
        (1..=self.time_count).map(|t| self.speed(t, node)).collect()
    }

    pub fn first_round(&self) -> usize {
        self.spec.history
    }

    pub fn last_round(&self) -> usize {
        self.time_count - self.spec.forecast
    }

    pub fn round_count(&self) -> usize {
        self.last_round() + 1 - self.first_round()
    }

    pub fn window(&self, node: usize, round: usize) -> Result<Window, DataError> {
        if node >= self.node_count {
            return Err(DataError::NodeOutOfRange {
                node,
                nodes: self.node_count,
            });
        }
        if round < self.first_round() || round > self.last_round() {
            return Err(DataError::RoundOutOfRange {
                round,
                first: self.first_round(),
                last: self.last_round(),
            });
        }
        let h = self.spec.history;
        let input = (0..h).map(|i| self.speed(round + 1 - h + i, node)).collect();
        let target = (0..self.spec.forecast)
            .map(|j| self.speed(round + 1 + j, node))
            .collect();
        Ok(Window {
            input,
            target,
            node,
            round,
        })
    }

    /// Splits admissible rounds into train/validation/test by `ratio`.
    ///
    /// Segment sizes are `floor(n * r / sum)` for train and validation; test
    /// takes the remainder.
    pub fn split_rounds(&self, ratio: [f64; 3]) -> Result<RoundSplit, DataError> {
        if ratio.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(DataError::Split(format!("ratio {ratio:?} has a negative component")));
        }
        let sum: f64 = ratio.iter().sum();
        if sum <= 0.0 {
            return Err(DataError::Split("ratio components sum to zero".into()));
        }
        let n = self.round_count();
        let share = |r: f64| ((n as f64) * r / sum + 1e-9).floor() as usize;
        let n_train = share(ratio[0]).min(n);
        let n_val = share(ratio[1]).min(n - n_train);
        let n_test = n - n_train - n_val;
        for (name, size, r) in [
            ("train", n_train, ratio[0]),
            ("validation", n_val, ratio[1]),
            ("test", n_test, ratio[2]),
        ] {
            if r > 0.0 && size == 0 {
                return Err(DataError::Split(format!(
                    "{name} segment is empty with {n} admissible rounds"
                )));
            }
        }
        let start = self.first_round();
        Ok(RoundSplit {
            train: start..start + n_train,
            validation: start + n_train..start + n_train + n_val,
            test: start + n_train + n_val..start + n,
        })
    }

    /// Per-node z-score parameters fitted on time steps `1 ..= upto`.
    pub fn fit_scaler(&self, upto: usize) -> NodeScaler {
        let upto = upto.clamp(1, self.time_count);
        let mut mean = vec![0.0; self.node_count];
        let mut std = vec![1.0; self.node_count];
        for node in 0..self.node_count {
            let values: Vec<f64> = (1..=upto).map(|t| self.speed(t, node)).collect();
            let m = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
            mean[node] = m;
            std[node] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        NodeScaler {
            mean,
            std,
            enabled: true,
        }
    }
}

/// Per-node affine transform between speed units and model units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScaler {
    mean: Vec<f64>,
    std: Vec<f64>,
    enabled: bool,
}

impl NodeScaler {
    pub fn identity(nodes: usize) -> Self {
        Self {
            mean: vec![0.0; nodes],
            std: vec![1.0; nodes],
            enabled: false,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn encode(&self, node: usize, values: &[f64]) -> Vec<f64> {
        if !self.enabled {
            return values.to_vec();
        }
        values
            .iter()
            .map(|v| (v - self.mean[node]) / self.std[node])
            .collect()
    }

    pub fn decode(&self, node: usize, values: &[f64]) -> Vec<f64> {
        if !self.enabled {
            return values.to_vec();
        }
        values
            .iter()
            .map(|v| v * self.std[node] + self.mean[node])
            .collect()
    }
}
