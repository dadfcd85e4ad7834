//! Single-layer GRU forecaster with a linear head on the last hidden state,
//! trained by exact backpropagation through time.
//!
//! Gate equations, for input scalar `s` and previous state `h`:
//!
//! ```text
//! u  = sigmoid(W_u s + U_u h + b_u)
//! r  = sigmoid(W_r s + U_r h + b_r)
//! h' = tanh(W_h s + r * (U_h h) + b_h)
//! h  = u * h + (1 - u) * h'
//! ```
//!
//! The prediction is `V_out^T h_H + b_out` with one output per forecast step.

mod params;
mod wire;

pub use self::params::{Block, ModelParams};
pub use self::wire::{deserialize, serialize, HEADER_LEN, MAGIC, WIRE_VERSION};
use crate::error::ModelError;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations recorded by [`forward`] for use in [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// `H + 1` hidden states, `hidden[0]` being the zero initial state.
    pub hidden: Vec<Vec<f64>>,
    pub update: Vec<Vec<f64>>,
    pub reset: Vec<Vec<f64>>,
    pub candidate: Vec<Vec<f64>>,
    /// `U_h h_prev` per step, needed for the reset-gate gradient.
    pub recurrent_candidate: Vec<Vec<f64>>,
    pub prediction: Vec<f64>,
}

pub fn forward(params: &ModelParams, input: &[f64]) -> Result<ForwardTrace, ModelError> {
    let hs = params.hidden();
    let steps = input.len();
    if steps == 0 {
        return Err(ModelError::Length { expected: 1, got: 0 });
    }
    let (w_u, w_r, w_h) = (params.block(Block::WUpdate), params.block(Block::WReset), params.block(Block::WCandidate));
    let (u_u, u_r, u_h) = (params.block(Block::UUpdate), params.block(Block::UReset), params.block(Block::UCandidate));
    let (b_u, b_r, b_h) = (params.block(Block::BUpdate), params.block(Block::BReset), params.block(Block::BCandidate));

    let mut trace = ForwardTrace {
        input: input.to_vec(),
        hidden: Vec::with_capacity(steps + 1),
        update: Vec::with_capacity(steps),
        reset: Vec::with_capacity(steps),
        candidate: Vec::with_capacity(steps),
        recurrent_candidate: Vec::with_capacity(steps),
        prediction: Vec::new(),
    };
    trace.hidden.push(vec![0.0; hs]);

    for (step, &s) in input.iter().enumerate() {
        if !s.is_finite() {
            return Err(ModelError::NonFinite { what: "input", step });
        }
        let h = &trace.hidden[step];
        let mut u = vec![0.0; hs];
        let mut r = vec![0.0; hs];
        let mut q = vec![0.0; hs];
        for k in 0..hs {
            let row = k * hs..(k + 1) * hs;
            let dot = |m: &[f64]| m[row.clone()].iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
            u[k] = sigmoid(w_u[k] * s + dot(u_u) + b_u[k]);
            r[k] = sigmoid(w_r[k] * s + dot(u_r) + b_r[k]);
            q[k] = dot(u_h);
        }
        let mut c = vec![0.0; hs];
        let mut next = vec![0.0; hs];
        for k in 0..hs {
            c[k] = (w_h[k] * s + r[k] * q[k] + b_h[k]).tanh();
            next[k] = u[k] * h[k] + (1.0 - u[k]) * c[k];
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { what: "hidden state", step });
        }
        trace.update.push(u);
        trace.reset.push(r);
        trace.candidate.push(c);
        trace.recurrent_candidate.push(q);
        trace.hidden.push(next);
    }

    let last = &trace.hidden[steps];
    let f = params.forecast();
    let v = params.block(Block::VOut);
    let b_out = params.block(Block::BOut);
    trace.prediction = (0..f)
        .map(|tau| b_out[tau] + (0..hs).map(|k| v[k * f + tau] * last[k]).sum::<f64>())
        .collect();
    if trace.prediction.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { what: "prediction", step: steps });
    }
    Ok(trace)
}

pub fn predict(params: &ModelParams, input: &[f64]) -> Result<Vec<f64>, ModelError> {
    forward(params, input).map(|t| t.prediction)
}

/// Mean squared error over the forecast horizon.
pub fn mse_loss(prediction: &[f64], target: &[f64]) -> Result<f64, ModelError> {
    if prediction.len() != target.len() {
        return Err(ModelError::Length {
            expected: prediction.len(),
            got: target.len(),
        });
    }
    if prediction.is_empty() {
        return Ok(0.0);
    }
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / prediction.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to every parameter, shaped like the
/// parameters themselves.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, target: &[f64]) -> Result<ModelParams, ModelError> {
    let hs = params.hidden();
    let f = params.forecast();
    if target.len() != f {
        return Err(ModelError::Length {
            expected: f,
            got: target.len(),
        });
    }
    let mut grad = ModelParams::zeros(hs, f);
    let steps = trace.input.len();

    let d_pred: Vec<f64> = trace
        .prediction
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / f as f64)
        .collect();
    let last = &trace.hidden[steps];
    let v = params.block(Block::VOut);
    let mut dh = vec![0.0; hs];
    {
        let gv = grad.block_mut(Block::VOut);
        for k in 0..hs {
            for tau in 0..f {
                gv[k * f + tau] = last[k] * d_pred[tau];
                dh[k] += v[k * f + tau] * d_pred[tau];
            }
        }
    }
    grad.block_mut(Block::BOut).copy_from_slice(&d_pred);

    let u_u = params.block(Block::UUpdate).to_vec();
    let u_r = params.block(Block::UReset).to_vec();
    let u_h = params.block(Block::UCandidate).to_vec();

    let mut dz_u = vec![0.0; hs];
    let mut dz_r = vec![0.0; hs];
    let mut dz_c = vec![0.0; hs];
    let mut dq = vec![0.0; hs];
    for step in (0..steps).rev() {
        let s = trace.input[step];
        let h_prev = &trace.hidden[step];
        let u = &trace.update[step];
        let r = &trace.reset[step];
        let c = &trace.candidate[step];
        let q = &trace.recurrent_candidate[step];

        let mut dh_prev = vec![0.0; hs];
        for k in 0..hs {
            let du = dh[k] * (h_prev[k] - c[k]);
            let dc = dh[k] * (1.0 - u[k]);
            dh_prev[k] += dh[k] * u[k];
            dz_c[k] = dc * (1.0 - c[k] * c[k]);
            dq[k] = dz_c[k] * r[k];
            let dr = dz_c[k] * q[k];
            dz_u[k] = du * u[k] * (1.0 - u[k]);
            dz_r[k] = dr * r[k] * (1.0 - r[k]);
        }

        for (block, dz) in [
            (Block::WUpdate, &dz_u),
            (Block::WReset, &dz_r),
            (Block::WCandidate, &dz_c),
        ] {
            for (g, d) in grad.block_mut(block).iter_mut().zip(dz.iter()) {
                *g += d * s;
            }
        }
        for (block, dz) in [
            (Block::BUpdate, &dz_u),
            (Block::BReset, &dz_r),
            (Block::BCandidate, &dz_c),
        ] {
            for (g, d) in grad.block_mut(block).iter_mut().zip(dz.iter()) {
                *g += d;
            }
        }
        for (block, dz, m) in [
            (Block::UUpdate, &dz_u, &u_u),
            (Block::UReset, &dz_r, &u_r),
            (Block::UCandidate, &dq, &u_h),
        ] {
            let g = grad.block_mut(block);
            for k in 0..hs {
                for j in 0..hs {
                    g[k * hs + j] += dz[k] * h_prev[j];
                    dh_prev[j] += m[k * hs + j] * dz[k];
                }
            }
        }
        dh = dh_prev;
    }

    for block in Block::ALL {
        if grad.block(block).iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFiniteGradient(block.name()));
        }
    }
    Ok(grad)
}

/// Loss of `params` on one `(input, target)` pair.
pub fn window_loss(params: &ModelParams, input: &[f64], target: &[f64]) -> Result<f64, ModelError> {
    mse_loss(&predict(params, input)?, target)
}

/// Runs `epochs` full-gradient steps on a single window's loss.
pub fn ogd_update(
    params: &ModelParams,
    input: &[f64],
    target: &[f64],
    lr: f64,
    epochs: usize,
) -> Result<ModelParams, ModelError> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(ModelError::Hyper(format!("learning rate {lr}")));
    }
    if epochs == 0 {
        return Err(ModelError::Hyper("epochs must be at least 1".into()));
    }
    let mut w = params.clone();
    for epoch in 0..epochs {
        let trace = forward(&w, input)?;
        let loss = mse_loss(&trace.prediction, target)?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss(epoch));
        }
        let grad = backward(&w, &trace, target)?;
        w.axpy(-lr, &grad);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, hs: usize, f: usize, scale: f64) -> ModelParams {
        let mut p = ModelParams::zeros(hs, f);
        for v in p.as_mut_slice() {
            *v = rng.random_range(-scale..scale);
        }
        p
    }

    /// Independent step-by-step recurrence with explicit scalar loops.
    fn scalar_forward(p: &ModelParams, input: &[f64]) -> Vec<f64> {
        let hs = p.hidden();
        let f = p.forecast();
        let mut h = vec![0.0; hs];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        for &s in input {
            let mut nh = vec![0.0; hs];
            for k in 0..hs {
                let mut zu = p.block(Block::WUpdate)[k] * s + p.block(Block::BUpdate)[k];
                let mut zr = p.block(Block::WReset)[k] * s + p.block(Block::BReset)[k];
                let mut uh = 0.0;
                for j in 0..hs {
                    zu += p.block(Block::UUpdate)[k * hs + j] * h[j];
                    zr += p.block(Block::UReset)[k * hs + j] * h[j];
                    uh += p.block(Block::UCandidate)[k * hs + j] * h[j];
                }
                let u = sig(zu);
                let r = sig(zr);
                let c = (p.block(Block::WCandidate)[k] * s + r * uh + p.block(Block::BCandidate)[k]).tanh();
                nh[k] = u * h[k] + (1.0 - u) * c;
            }
            h = nh;
        }
        let mut out = vec![0.0; f];
        for (tau, o) in out.iter_mut().enumerate() {
            *o = p.block(Block::BOut)[tau];
            for k in 0..hs {
                *o += p.block(Block::VOut)[k * f + tau] * h[k];
            }
        }
        out
    }

    #[test]
    fn zero_params_predict_zero() {
        let p = ModelParams::zeros(4, 2);
        let t = forward(&p, &[1.0, -2.0, 3.0]).unwrap();
        assert!(t.update.iter().flatten().all(|&u| u == 0.5));
        assert!(t.hidden.iter().flatten().all(|&h| h == 0.0));
        assert_eq!(t.prediction, vec![0.0, 0.0]);
    }

    #[test]
    fn output_bias_passes_through() {
        let mut p = ModelParams::zeros(3, 2);
        p.block_mut(Block::BOut).copy_from_slice(&[1.5, -0.5]);
        assert_eq!(predict(&p, &[0.0; 5]).unwrap(), vec![1.5, -0.5]);
    }

    #[test]
    fn matches_scalar_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = random_params(&mut rng, 3, 2, 1.0);
            let input: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = predict(&p, &input).unwrap();
            let want = scalar_forward(&p, &input);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0], &[3.0]).unwrap(), 9.0);
        assert_eq!(mse_loss(&[1.0, 2.0], &[3.0, 2.0]).unwrap(), 2.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 3, 2, 0.5);
        let input = [0.3, -0.1, 0.8];
        let trace = forward(&p, &input).unwrap();
        let target = trace.prediction.clone();
        let g = backward(&p, &trace, &target).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_bias_gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&mut rng, 4, 3, 0.7);
        let trace = forward(&p, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let target = [1.0, -1.0, 0.5];
        let g = backward(&p, &trace, &target).unwrap();
        for tau in 0..3 {
            let want = 2.0 / 3.0 * (trace.prediction[tau] - target[tau]);
            assert!((g.block(Block::BOut)[tau] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let step = 1e-5;
        for _ in 0..20 {
            let hs = rng.random_range(1..=4);
            let f = rng.random_range(1..=2);
            let h = rng.random_range(1..=6);
            let p = random_params(&mut rng, hs, f, 0.8);
            let input: Vec<f64> = (0..h).map(|_| rng.random_range(-1.5..1.5)).collect();
            let target: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = backward(&p, &forward(&p, &input).unwrap(), &target).unwrap();
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus.as_mut_slice()[i] += step;
                let mut minus = p.clone();
                minus.as_mut_slice()[i] -= step;
                let fd = (window_loss(&plus, &input, &target).unwrap()
                    - window_loss(&minus, &input, &target).unwrap())
                    / (2.0 * step);
                let a = g.as_slice()[i];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!((a - fd).abs() / denom < 1e-4, "param {i}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn hidden_states_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, 5, 1, 3.0);
        let input: Vec<f64> = (0..12).map(|_| rng.random_range(-50.0..50.0)).collect();
        let t = forward(&p, &input).unwrap();
        assert!(t.hidden.iter().flatten().all(|h| h.abs() <= 1.0));
    }

    #[test]
    fn ogd_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 3, 1, 0.5);
        let input = [0.2, 0.4, 0.6];
        let target = predict(&p, &input).unwrap();
        assert_eq!(ogd_update(&p, &input, &target, 0.1, 1).unwrap(), p);
        assert_eq!(ogd_update(&p, &input, &[3.0], 0.0, 4).unwrap(), p);

        let two = ogd_update(&p, &input, &[3.0], 1e-2, 2).unwrap();
        let once = ogd_update(&p, &input, &[3.0], 1e-2, 1).unwrap();
        let twice = ogd_update(&once, &input, &[3.0], 1e-2, 1).unwrap();
        assert_eq!(two, twice);

        assert!(ogd_update(&p, &input, &[3.0], 1e-2, 0).is_err());
        assert!(ogd_update(&p, &input, &[3.0], f64::NAN, 1).is_err());
    }

    #[test]
    fn ogd_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 120;
        let mut violations = 0;
        for _ in 0..trials {
            let hs = rng.random_range(1..=8);
            let p = ModelParams::init(rng.random(), hs, 1).unwrap();
            let input: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
            let target = [rng.random_range(-2.0..2.0)];
            let before = window_loss(&p, &input, &target).unwrap();
            let after = window_loss(&ogd_update(&p, &input, &target, 1e-3, 5).unwrap(), &input, &target).unwrap();
            if after > before {
                violations += 1;
            }
        }
        assert!(violations * 50 <= trials, "{violations} ascent steps");
    }
}
