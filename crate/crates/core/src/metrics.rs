//! Point and interval forecast metrics.
//!
//! RMSE is the mean over (node, round) of the per-window RMSE across the
//! forecast horizon, not the pooled root-mean-square. At `F = 1` it therefore
//! coincides with MAE.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

/// Predictions and targets of one (node, round) window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub node: usize,
    pub round: usize,
    pub prediction: Vec<f64>,
    pub target: Vec<f64>,
}

impl ErrorEntry {
    pub fn window_rmse(&self) -> f64 {
        let n = self.target.len() as f64;
        (self.squared().sum::<f64>() / n).sqrt()
    }

    pub fn window_mae(&self) -> f64 {
        let n = self.target.len() as f64;
        self.prediction
            .iter()
            .zip(&self.target)
            .map(|(p, t)| (t - p).abs())
            .sum::<f64>()
            / n
    }

    fn squared(&self) -> impl Iterator<Item = f64> + '_ {
        self.prediction.iter().zip(&self.target).map(|(p, t)| (t - p).powi(2))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTable {
    entries: Vec<ErrorEntry>,
}

impl ErrorTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, node: usize, round: usize, prediction: Vec<f64>, target: Vec<f64>) -> Result<(), MetricsError> {
        if prediction.len() != target.len() || target.is_empty() {
            return Err(MetricsError::Length(format!(
                "prediction has {} values, target {}",
                prediction.len(),
                target.len()
            )));
        }
        if prediction.iter().chain(&target).any(|v| !v.is_finite()) {
            return Err(MetricsError::Length("non-finite prediction or target".into()));
        }
        self.entries.push(ErrorEntry {
            node,
            round,
            prediction,
            target,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[ErrorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn nonempty(&self) -> Result<(), MetricsError> {
        if self.entries.is_empty() {
            Err(MetricsError::Empty)
        } else {
            Ok(())
        }
    }

    pub fn rmse(&self) -> Result<f64, MetricsError> {
        self.nonempty()?;
        Ok(self.entries.iter().map(ErrorEntry::window_rmse).sum::<f64>() / self.len() as f64)
    }

    pub fn mae(&self) -> Result<f64, MetricsError> {
        self.nonempty()?;
        Ok(self.entries.iter().map(ErrorEntry::window_mae).sum::<f64>() / self.len() as f64)
    }

    /// Root of the mean squared error over every (node, round, horizon).
    pub fn pooled_rmse(&self) -> Result<f64, MetricsError> {
        self.nonempty()?;
        let (sum, count) = self
            .entries
            .iter()
            .fold((0.0, 0usize), |(s, c), e| (s + e.squared().sum::<f64>(), c + e.target.len()));
        Ok((sum / count as f64).sqrt())
    }

    /// Keeps only horizon steps whose true speed is at most `threshold`;
    /// windows left without any step are dropped.
    pub fn congested(&self, threshold: f64) -> Self {
        let entries = self
            .entries
            .iter()
            .filter_map(|e| {
                let (prediction, target): (Vec<f64>, Vec<f64>) = e
                    .prediction
                    .iter()
                    .zip(&e.target)
                    .filter(|(_, t)| **t <= threshold)
                    .unzip();
                (!target.is_empty()).then_some(ErrorEntry {
                    node: e.node,
                    round: e.round,
                    prediction,
                    target,
                })
            })
            .collect();
        Self { entries }
    }
}

/// Lower and upper prediction bounds indexed `[node][round]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSet {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl IntervalSet {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MetricsError::Interval(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if self.lower.len() != self.upper.len() {
            return Err(MetricsError::Interval("lower/upper node counts differ".into()));
        }
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if l.len() != u.len() {
                return Err(MetricsError::Interval("lower/upper lengths differ".into()));
            }
            if l.iter().zip(u).any(|(a, b)| !(a <= b)) {
                return Err(MetricsError::Interval("lower bound exceeds upper bound".into()));
            }
        }
        Ok(())
    }
}

/// Mean scaled interval score.
///
/// `truth[n]` is the observed series aligned with `intervals.*[n]`; the scale
/// is the mean absolute lag-`periodicity` difference of the truth.
pub fn msis(truth: &[Vec<f64>], intervals: &IntervalSet, periodicity: usize) -> Result<f64, MetricsError> {
    intervals.validate()?;
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    if truth.len() != intervals.lower.len() {
        return Err(MetricsError::Length(format!(
            "{} truth series for {} interval series",
            truth.len(),
            intervals.lower.len()
        )));
    }
    let len = truth[0].len();
    if truth.iter().zip(&intervals.lower).any(|(s, l)| s.len() != len || l.len() != len) {
        return Err(MetricsError::Length("series lengths differ".into()));
    }
    if len <= periodicity || periodicity == 0 {
        return Err(MetricsError::ShortSeries {
            len,
            period: periodicity,
        });
    }
    let nodes = truth.len() as f64;
    let seasonal: f64 = truth
        .iter()
        .map(|s| (periodicity..len).map(|t| (s[t] - s[t - periodicity]).abs()).sum::<f64>())
        .sum();
    let scale = seasonal / ((len - periodicity) as f64 * nodes);
    if scale == 0.0 {
        return Err(MetricsError::ZeroScale(periodicity));
    }
    let denom = len as f64 * nodes;
    let (mut width, mut p_l, mut p_u) = (0.0, 0.0, 0.0);
    for (n, s) in truth.iter().enumerate() {
        for (t, &v) in s.iter().enumerate() {
            let (l, u) = (intervals.lower[n][t], intervals.upper[n][t]);
            width += u - l;
            if v < l {
                p_l += l - v;
            }
            if v > u {
                p_u += v - u;
            }
        }
    }
    let (width, p_l, p_u) = (width / denom, p_l / denom, p_u / denom);
    Ok((width + 2.0 / intervals.alpha * (p_l + p_u)) / scale)
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const MIN_RESIDUALS: usize = 30;

/// Symmetric intervals `prediction ± quantile_{1-alpha/2}(|residual|)` using the
/// trailing `window` residuals strictly before each scored round.
///
/// `predictions[n]` and `truths[n]` cover every round in order; intervals are
/// produced for rounds `scored_from..`.
pub fn interval_from_residuals(
    predictions: &[Vec<f64>],
    truths: &[Vec<f64>],
    scored_from: usize,
    alpha: f64,
    window: usize,
) -> Result<IntervalSet, MetricsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetricsError::Interval(format!("alpha {alpha} not in (0, 1)")));
    }
    let mut lower = Vec::with_capacity(predictions.len());
    let mut upper = Vec::with_capacity(predictions.len());
    for (pred, truth) in predictions.iter().zip(truths) {
        if pred.len() != truth.len() {
            return Err(MetricsError::Length("prediction and truth lengths differ".into()));
        }
        let residuals: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (t - p).abs()).collect();
        if scored_from < MIN_RESIDUALS {
            return Err(MetricsError::InsufficientHistory {
                needed: MIN_RESIDUALS,
                have: scored_from,
            });
        }
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for t in scored_from..pred.len() {
            let start = t.saturating_sub(window.max(MIN_RESIDUALS));
            let half = quantile(&residuals[start..t], 1.0 - alpha / 2.0);
            lo.push(pred[t] - half);
            hi.push(pred[t] + half);
        }
        lower.push(lo);
        upper.push(hi);
    }
    Ok(IntervalSet { lower, upper, alpha })
}
