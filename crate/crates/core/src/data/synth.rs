use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Adjacency, TrafficDataset, WindowSpec};
use crate::error::DataError;

/// Parameters of the piecewise-stationary surrogate generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub nodes: usize,
    /// Number of time steps generated.
    pub time_steps: usize,
    /// Steps per stationary segment; the mean changes at every boundary.
    pub segment_length: usize,
    /// Probability of each off-diagonal directed edge.
    pub density: f64,
    /// AR(1) coefficient of the within-segment fluctuation.
    pub ar_coeff: f64,
    /// Innovation standard deviation (km/h).
    pub noise_std: f64,
    /// Segment means are drawn uniformly from this range (km/h).
    pub level_low: f64,
    pub level_high: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            nodes: 8,
            time_steps: 2512,
            segment_length: 628,
            density: 0.3,
            ar_coeff: 0.8,
            noise_std: 0.6,
            level_low: 35.0,
            level_high: 70.0,
        }
    }
}

/// Generates a dataset whose per-node series are AR(1) fluctuations around a
/// mean that jumps at every segment boundary. Deterministic in `spec.seed`.
pub fn synthesize_drift(spec: &SynthSpec, window: WindowSpec) -> Result<TrafficDataset, DataError> {
    if spec.nodes == 0 || spec.time_steps == 0 || spec.segment_length == 0 {
        return Err(DataError::Invalid(
            "nodes, time_steps and segment_length must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.density) {
        return Err(DataError::Invalid(format!("density {} not in [0, 1]", spec.density)));
    }
    if !(spec.ar_coeff.abs() < 1.0) || !(spec.noise_std >= 0.0) || !(spec.level_low <= spec.level_high) {
        return Err(DataError::Invalid("ar_coeff, noise_std or level range out of bounds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.nodes;

    let mut adjacency = Adjacency::self_loops(n);
    for from in 0..n {
        for to in 0..n {
            if from != to && rng.random::<f64>() < spec.density {
                adjacency.set(from, to, true);
            }
        }
    }

    let segments = spec.time_steps.div_ceil(spec.segment_length);
    let levels: Vec<f64> = (0..segments * n)
        .map(|_| rng.random_range(spec.level_low..=spec.level_high))
        .collect();

    let stationary_std = spec.noise_std / (1.0 - spec.ar_coeff * spec.ar_coeff).sqrt();
    let mut state: Vec<f64> = (0..n)
        .map(|_| stationary_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut speeds = Vec::with_capacity(spec.time_steps * n);
    for t in 0..spec.time_steps {
        let segment = t / spec.segment_length;
        for (node, e) in state.iter_mut().enumerate() {
            if t > 0 {
                *e = spec.ar_coeff * *e + spec.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
            speeds.push((levels[segment * n + node] + *e).max(0.0));
        }
    }
    TrafficDataset::new(speeds, spec.time_steps, n, adjacency, window)
}
