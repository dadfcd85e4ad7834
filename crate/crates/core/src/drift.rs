//! KL-divergence drift gate deciding whether a client joins a round.
//!
//! Each client keeps the input window that produced its current local model
//! (`hw`). The current window is compared against it after sum-normalization;
//! a divergence at or above the threshold means drift and triggers
//! participation.

use serde::{Deserialize, Serialize};

use crate::error::DriftError;

/// Additive smoothing applied before normalization so every entry is positive.
pub const SMOOTHING: f64 = 1e-8;

/// Which window replaces `hw` after an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HwUpdate {
    /// The length-H input window that triggered the update.
    #[default]
    InputWindow,
    /// The length-F target window; only valid when F == H.
    ForecastWindow,
}

/// Sum-normalizes a window into a strictly positive probability vector.
pub fn to_distribution(window: &[f64]) -> Result<Vec<f64>, DriftError> {
    if window.is_empty() {
        return Err(DriftError::Empty);
    }
    for (index, &value) in window.iter().enumerate() {
        if !value.is_finite() {
            return Err(DriftError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(DriftError::NegativeEntry { index, value });
        }
    }
    let total: f64 = window.iter().map(|v| v + SMOOTHING).sum();
    Ok(window.iter().map(|v| (v + SMOOTHING) / total).collect())
}

fn check_distribution(p: &[f64]) -> Result<(), DriftError> {
    if p.is_empty() {
        return Err(DriftError::Empty);
    }
    if let Some(v) = p.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(DriftError::NotDistribution(format!("entry {v} is not strictly positive")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DriftError::NotDistribution(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// `D(p || q) = sum_i p_i ln(p_i / q_i)`, clamped at zero.
pub fn kld(p: &[f64], q: &[f64]) -> Result<f64, DriftError> {
    if p.len() != q.len() {
        return Err(DriftError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let d: f64 = p.iter().zip(q).map(|(pi, qi)| pi * (pi / qi).ln()).sum();
    Ok(d.max(0.0))
}

/// Divergence of the current window from a stored one.
pub fn window_divergence(current: &[f64], stored: &[f64]) -> Result<f64, DriftError> {
    kld(&to_distribution(current)?, &to_distribution(stored)?)
}

/// Per-client drift statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftState {
    hw: Vec<f64>,
    last_update_round: usize,
    threshold: f64,
}

impl DriftState {
    /// State after the forced first participation at `round`.
    pub fn bootstrap(window: &[f64], round: usize, threshold: f64) -> Result<Self, DriftError> {
        to_distribution(window)?;
        Ok(Self {
            hw: window.to_vec(),
            last_update_round: round,
            threshold,
        })
    }

    pub fn stored_window(&self) -> &[f64] {
        &self.hw
    }

    pub fn last_update_round(&self) -> usize {
        self.last_update_round
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Returns `(divergence >= threshold, divergence)` without changing state.
    pub fn should_participate(&self, current: &[f64]) -> Result<(bool, f64), DriftError> {
        let divergence = window_divergence(current, &self.hw)?;
        Ok((divergence >= self.threshold, divergence))
    }

    /// Stores `window` as the new reference after a completed update.
    pub fn commit_update(&mut self, window: &[f64], round: usize) {
        self.hw.clear();
        self.hw.extend_from_slice(window);
        self.last_update_round = round;
    }
}

/// Divergences logged along one client's gate trajectory; `None` marks the
/// forced bootstrap round.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DivergenceLog {
    pub entries: Vec<Vec<Option<f64>>>,
}

impl DivergenceLog {
    /// Participations obtained by re-thresholding the logged divergences at `q`.
    ///
    /// The `hw` trajectory is the logged one, so the count is nonincreasing in `q`.
    pub fn replay_count(&self, q: f64) -> usize {
        self.entries
            .iter()
            .flatten()
            .filter(|d| match d {
                None => true,
                Some(d) => *d >= q,
            })
            .count()
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs the gate over a stream of windows per client, without any model.
///
/// Participation depends only on the data, so this reproduces the schedule of
/// a full run exactly. `windows[c]` holds `(input, target)` pairs in round order.
pub fn participation_schedule(
    windows: &[Vec<(Vec<f64>, Vec<f64>)>],
    threshold: f64,
    mode: HwUpdate,
) -> Result<(Vec<Vec<bool>>, DivergenceLog), DriftError> {
    let mut decisions = Vec::with_capacity(windows.len());
    let mut log = DivergenceLog::default();
    for client in windows {
        let mut state: Option<DriftState> = None;
        let mut flags = Vec::with_capacity(client.len());
        let mut divs = Vec::with_capacity(client.len());
        for (round, (input, target)) in client.iter().enumerate() {
            let committed = match mode {
                HwUpdate::InputWindow => input,
                HwUpdate::ForecastWindow => target,
            };
            match &mut state {
                None => {
                    state = Some(DriftState::bootstrap(committed, round, threshold)?);
                    flags.push(true);
                    divs.push(None);
                }
                Some(s) => {
                    let (go, d) = s.should_participate(input)?;
                    if go {
                        s.commit_update(committed, round);
                    }
                    flags.push(go);
                    divs.push(Some(d));
                }
            }
        }
        decisions.push(flags);
        log.entries.push(divs);
    }
    Ok((decisions, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn proportional_normalization() {
        assert!(close(&to_distribution(&[1.0, 3.0]).unwrap(), &[0.25, 0.75], 1e-8));
        let third = 1.0 / 3.0;
        assert!(close(&to_distribution(&[0.0, 0.0, 0.0]).unwrap(), &[third; 3], 1e-15));
        assert!(close(&to_distribution(&[2.0; 4]).unwrap(), &[0.25; 4], 1e-15));
    }

    #[test]
    fn normalization_errors() {
        assert_eq!(
            to_distribution(&[1.0, -0.5]),
            Err(DriftError::NegativeEntry { index: 1, value: -0.5 })
        );
        assert_eq!(to_distribution(&[]), Err(DriftError::Empty));
        assert!(to_distribution(&[f64::NAN]).is_err());
    }

    #[test]
    fn kld_hand_values() {
        assert_eq!(kld(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let got = kld(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.143_841).abs() < 1e-6);
    }

    #[test]
    fn kld_input_errors() {
        assert!(matches!(kld(&[1.0], &[0.5, 0.5]), Err(DriftError::LengthMismatch { .. })));
        assert!(matches!(kld(&[0.5, 0.6], &[0.5, 0.5]), Err(DriftError::NotDistribution(_))));
        assert!(matches!(kld(&[1.0, 0.0], &[0.5, 0.5]), Err(DriftError::NotDistribution(_))));
    }

    #[test]
    fn gate_decisions() {
        let hw = [1.0, 1.0];
        let state = DriftState::bootstrap(&hw, 1, 1e-6).unwrap();
        assert_eq!(state.should_participate(&hw).unwrap(), (false, 0.0));

        let zero_q = DriftState::bootstrap(&hw, 1, 0.0).unwrap();
        assert!(zero_q.should_participate(&hw).unwrap().0);

        // current (1,1) -> (0.5,0.5); stored (1,3) -> (0.25,0.75)
        let state = DriftState::bootstrap(&[1.0, 3.0], 1, 0.0003).unwrap();
        let (go, d) = state.should_participate(&[1.0, 1.0]).unwrap();
        assert!(go);
        assert!((d - 0.143_841).abs() < 1e-6);
    }

    #[test]
    fn tie_participates() {
        let state = DriftState::bootstrap(&[1.0, 3.0], 1, 0.0).unwrap();
        let (_, d) = state.should_participate(&[1.0, 1.0]).unwrap();
        let tied = DriftState::bootstrap(&[1.0, 3.0], 1, d).unwrap();
        assert!(tied.should_participate(&[1.0, 1.0]).unwrap().0);
    }

    #[test]
    fn commit_is_a_fixed_point() {
        let mut state = DriftState::bootstrap(&[1.0, 3.0], 1, 0.01).unwrap();
        state.commit_update(&[5.0, 2.0], 7);
        assert_eq!(state.last_update_round(), 7);
        assert_eq!(state.should_participate(&[5.0, 2.0]).unwrap(), (false, 0.0));
    }

    fn stream(windows: &[[f64; 2]]) -> Vec<(Vec<f64>, Vec<f64>)> {
        windows.iter().map(|w| (w.to_vec(), vec![0.0])).collect()
    }

    #[test]
    fn repeated_window_participates_once() {
        let a = [1.0, 3.0];
        let b = [3.0, 1.0];
        // bootstrap on a, drift to b commits, repeat of b does not
        let (flags, _) =
            participation_schedule(&[stream(&[a, b, b])], 1e-3, HwUpdate::InputWindow).unwrap();
        assert_eq!(flags[0], vec![true, true, false]);
    }

    #[test]
    fn alternating_windows_participate_every_round() {
        let a = [1.0, 3.0];
        let b = [3.0, 1.0];
        let d_ab = window_divergence(&a, &b).unwrap();
        let d_ba = window_divergence(&b, &a).unwrap();
        let q = d_ab.min(d_ba);
        let windows: Vec<[f64; 2]> = (0..20).map(|i| if i % 2 == 0 { a } else { b }).collect();
        let (flags, log) = participation_schedule(&[stream(&windows)], q, HwUpdate::InputWindow).unwrap();
        assert!(flags[0].iter().all(|&f| f));
        assert_eq!(log.replay_count(q), 20);
        assert_eq!(log.replay_count(f64::INFINITY), 1);
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..10.0, len).prop_map(|w| to_distribution(&w).unwrap())
    }

    proptest! {
        #[test]
        fn kld_of_self_is_zero(p in distribution(12)) {
            prop_assert!(kld(&p, &p).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn kld_is_nonnegative((p, q) in (1usize..20).prop_flat_map(|n| (distribution(n), distribution(n)))) {
            prop_assert!(kld(&p, &q).unwrap() >= -1e-12);
        }

        #[test]
        fn normalization_is_scale_invariant(
            w in prop::collection::vec(0.0f64..100.0, 1..16),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(w.iter().sum::<f64>() >= 1.0 && w.iter().sum::<f64>() * c >= 1.0);
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            let a = to_distribution(&w).unwrap();
            let b = to_distribution(&scaled).unwrap();
            prop_assert!(close(&a, &b, 1e-6));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn gate_is_monotone_in_threshold(
            hw in prop::collection::vec(0.0f64..80.0, 6),
            cur in prop::collection::vec(0.0f64..80.0, 6),
            q1 in 0.0f64..0.05,
            q2 in 0.0f64..0.05,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let at_hi = DriftState::bootstrap(&hw, 1, hi).unwrap().should_participate(&cur).unwrap().0;
            let at_lo = DriftState::bootstrap(&hw, 1, lo).unwrap().should_participate(&cur).unwrap().0;
            prop_assert!(!at_hi || at_lo);
        }
    }
}
