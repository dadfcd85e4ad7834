//! Offline reference model and regret.
//!
//! The reference is fitted by full-batch gradient descent over every window
//! of the horizon, restarted from several seeds; the lowest-loss fit wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, ModelError};
use crate::gru::{backward, forward, window_loss, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Stop once the relative loss improvement of one step falls below this.
    pub tolerance: f64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            learning_rate: 0.05,
            restarts: 3,
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub params: ModelParams,
    pub loss: f64,
    pub iterations: usize,
}

/// Mean window loss of `params`.
pub fn mean_loss(params: &ModelParams, windows: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, ModelError> {
    let losses: Vec<f64> = windows
        .par_iter()
        .map(|(x, y)| window_loss(params, x, y))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / windows.len() as f64)
}

fn mean_gradient(params: &ModelParams, windows: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, ModelParams), ModelError> {
    let parts: Vec<(f64, ModelParams)> = windows
        .par_iter()
        .map(|(x, y)| {
            let trace = forward(params, x)?;
            let loss = crate::gru::mse_loss(&trace.prediction, y)?;
            Ok((loss, backward(params, &trace, y)?))
        })
        .collect::<Result<_, ModelError>>()?;
    let scale = 1.0 / windows.len() as f64;
    let mut grad = ModelParams::zeros(params.hidden(), params.forecast());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.axpy(scale, g);
    }
    Ok((loss * scale, grad))
}

fn fit_once(
    start: ModelParams,
    windows: &[(Vec<f64>, Vec<f64>)],
    budget: &OracleBudget,
) -> Result<(OracleFit, f64), MetricsError> {
    let mut w = start;
    let (initial, mut grad) = mean_gradient(&w, windows)?;
    let mut loss = initial;
    let mut iterations = 0;
    while iterations < budget.max_iterations {
        let mut next = w.clone();
        next.axpy(-budget.learning_rate, &grad);
        let (next_loss, next_grad) = mean_gradient(&next, windows)?;
        iterations += 1;
        if !next_loss.is_finite() {
            break;
        }
        let improvement = (loss - next_loss) / loss.abs().max(f64::MIN_POSITIVE);
        w = next;
        loss = next_loss;
        grad = next_grad;
        if improvement < budget.tolerance {
            break;
        }
    }
    Ok((OracleFit { params: w, loss, iterations }, initial))
}

/// Fits the reference model over `windows`, given as `(input, target)` pairs.
pub fn offline_oracle(
    windows: &[(Vec<f64>, Vec<f64>)],
    hidden: usize,
    forecast: usize,
    budget: &OracleBudget,
) -> Result<OracleFit, MetricsError> {
    if windows.is_empty() {
        return Err(MetricsError::Empty);
    }
    if budget.restarts == 0 || budget.max_iterations == 0 || !(budget.learning_rate > 0.0) {
        return Err(ModelError::Hyper("oracle budget must allow at least one step".into()).into());
    }
    let mut best: Option<OracleFit> = None;
    let mut improved = false;
    for r in 0..budget.restarts {
        let start = ModelParams::init(budget.seed.wrapping_add(r as u64), hidden, forecast)?;
        let (fit, initial) = fit_once(start, windows, budget)?;
        improved |= fit.loss < initial;
        if best.as_ref().is_none_or(|b| fit.loss < b.loss) {
            best = Some(fit);
        }
    }
    if !improved {
        return Err(MetricsError::OracleStalled(budget.max_iterations));
    }
    Ok(best.expect("at least one restart"))
}

/// Cumulative regret of realised per-window losses against a fixed reference.
pub fn regret(
    actual_losses: &[f64],
    reference: &ModelParams,
    windows: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64, MetricsError> {
    if actual_losses.len() != windows.len() {
        return Err(MetricsError::Length(format!(
            "{} losses for {} windows",
            actual_losses.len(),
            windows.len()
        )));
    }
    let reference_losses: Vec<f64> = windows
        .par_iter()
        .map(|(x, y)| window_loss(reference, x, y))
        .collect::<Result<_, _>>()?;
    Ok(actual_losses.iter().sum::<f64>() - reference_losses.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_windows(c: f64, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..n).map(|_| (vec![c; 4], vec![c])).collect()
    }

    #[test]
    fn constant_series_is_fitted() {
        let windows = constant_windows(0.5, 8);
        let budget = OracleBudget {
            max_iterations: 3000,
            learning_rate: 0.2,
            tolerance: 1e-9,
            ..OracleBudget::default()
        };
        let fit = offline_oracle(&windows, 3, 1, &budget).unwrap();
        assert!(fit.loss < 1e-4, "loss {}", fit.loss);
        let r = regret(&[fit.loss; 8], &fit.params, &windows).unwrap();
        assert!(r.abs() < 1e-9);
    }

    #[test]
    fn regret_against_self_is_zero() {
        let windows: Vec<_> = (0..6)
            .map(|i| (vec![i as f64 * 0.1, 0.3, 0.2], vec![0.4, i as f64 * 0.05]))
            .collect();
        let p = ModelParams::init(4, 3, 2).unwrap();
        let losses: Vec<f64> = windows.iter().map(|(x, y)| window_loss(&p, x, y).unwrap()).collect();
        assert!(regret(&losses, &p, &windows).unwrap().abs() < 1e-12);
        assert!(regret(&losses[..3], &p, &windows).is_err());
    }

    #[test]
    fn regret_sign_and_additivity() {
        let windows: Vec<_> = (0..8).map(|i| (vec![0.1 * i as f64, 0.2], vec![0.3])).collect();
        let p = ModelParams::init(2, 2, 1).unwrap();
        let own: Vec<f64> = windows.iter().map(|(x, y)| window_loss(&p, x, y).unwrap()).collect();
        let better: Vec<f64> = own.iter().map(|l| l - 0.01).collect();
        assert!(regret(&better, &p, &windows).unwrap() < 0.0);
        let whole = regret(&better, &p, &windows).unwrap();
        let parts = regret(&better[..3], &p, &windows[..3]).unwrap() + regret(&better[3..], &p, &windows[3..]).unwrap();
        assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn restarts_keep_the_best() {
        let windows: Vec<_> = (0..10)
            .map(|i| (vec![(i as f64 * 0.7).sin(), (i as f64).cos()], vec![(i as f64 * 0.3).sin()]))
            .collect();
        let one = OracleBudget {
            restarts: 1,
            max_iterations: 200,
            ..OracleBudget::default()
        };
        let three = OracleBudget { restarts: 3, ..one };
        let a = offline_oracle(&windows, 4, 1, &one).unwrap();
        let b = offline_oracle(&windows, 4, 1, &three).unwrap();
        assert!(b.loss <= a.loss);
        assert!((mean_loss(&b.params, &windows).unwrap() - b.loss).abs() < 1e-12);
    }

    #[test]
    fn stalled_budget_is_reported() {
        let windows = constant_windows(0.0, 3);
        // zero-initialised biases and zero inputs already predict 0
        let budget = OracleBudget {
            max_iterations: 5,
            ..OracleBudget::default()
        };
        assert_eq!(
            offline_oracle(&windows, 2, 1, &budget).unwrap_err(),
            MetricsError::OracleStalled(5)
        );
    }
}
