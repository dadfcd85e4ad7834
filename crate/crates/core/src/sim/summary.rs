use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, RoundReport};
use crate::error::{MetricsError, Result};
use crate::metrics::{interval_from_residuals, msis, ErrorTable};

/// Scored-segment metrics and cost totals of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: String,
    pub forecast: usize,
    pub scored_rounds: usize,
    pub rmse: f64,
    pub mae: f64,
    pub pooled_rmse: Option<f64>,
    /// `None` when the residual history or the seasonal scale is unusable.
    pub msis: Option<f64>,
    pub congested_rmse: Option<f64>,
    pub congested_mae: Option<f64>,
    pub participation_fraction: f64,
    pub total_flops: u64,
    pub total_bytes: u64,
}

/// Builds the error table of scored rounds from a report stream.
pub fn error_table(reports: &[RoundReport], score_all_clients: bool) -> Result<ErrorTable> {
    let mut table = ErrorTable::new();
    for r in reports.iter().filter(|r| r.scored) {
        for c in &r.clients {
            if score_all_clients || c.participated {
                table.push(c.node, r.round, c.prediction.clone(), c.target.clone())?;
            }
        }
    }
    Ok(table)
}

fn horizon_one_msis(reports: &[RoundReport], config: &ExperimentConfig) -> Option<f64> {
    let first = reports.iter().position(|r| r.scored)?;
    let nodes = reports.first()?.clients.len();
    let series = |f: fn(&super::ClientRecord) -> f64| -> Vec<Vec<f64>> {
        (0..nodes)
            .map(|n| reports.iter().map(|r| f(&r.clients[n])).collect())
            .collect()
    };
    let predictions = series(|c| c.prediction[0]);
    let truths = series(|c| c.target[0]);
    let intervals = interval_from_residuals(&predictions, &truths, first, config.alpha, config.interval_window).ok()?;
    let scored: Vec<Vec<f64>> = truths.iter().map(|t| t[first..].to_vec()).collect();
    msis(&scored, &intervals, config.periodicity).ok()
}

/// Metrics over the scored rounds of `reports`.
pub fn summarize(reports: &[RoundReport], config: &ExperimentConfig) -> Result<RunMetrics> {
    let table = error_table(reports, config.score_all_clients)?;
    let scored: Vec<&RoundReport> = reports.iter().filter(|r| r.scored).collect();
    if scored.is_empty() {
        return Err(MetricsError::Empty.into());
    }
    let slots: usize = scored.iter().map(|r| r.clients.len()).sum();
    let participations: usize = scored.iter().map(|r| r.participation()).sum();
    let (congested_rmse, congested_mae) = match config.congestion_threshold {
        Some(c) => {
            let t = table.congested(c);
            (t.rmse().ok(), t.mae().ok())
        }
        None => (None, None),
    };
    Ok(RunMetrics {
        method: config.method.name().to_string(),
        forecast: config.forecast,
        scored_rounds: scored.len(),
        rmse: table.rmse()?,
        mae: table.mae()?,
        pooled_rmse: if config.pooled_rmse { Some(table.pooled_rmse()?) } else { None },
        msis: horizon_one_msis(reports, config),
        congested_rmse,
        congested_mae,
        participation_fraction: participations as f64 / slots as f64,
        total_flops: scored.iter().map(|r| r.flops()).sum(),
        total_bytes: scored.iter().map(|r| r.bytes()).sum(),
    })
}
