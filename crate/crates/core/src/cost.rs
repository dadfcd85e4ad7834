//! Analytic FLOP and byte accounting for client-side work.
//!
//! Forward cost per window is `H * 6 hs (1 + hs) + 2 hs F`: three gate
//! mat-vecs per step plus the output head. Gate biases are not counted.
//! Backward is twice the forward cost.

use serde::{Deserialize, Serialize};

use crate::gru::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub hidden: u64,
    pub history: u64,
    pub forecast: u64,
    pub epochs: u64,
    pub bytes_per_param: u64,
}

impl CostModel {
    pub fn new(hidden: usize, history: usize, forecast: usize, epochs: usize) -> Self {
        Self {
            hidden: hidden as u64,
            history: history as u64,
            forecast: forecast as u64,
            epochs: epochs as u64,
            bytes_per_param: 4,
        }
    }

    pub fn with_bytes_per_param(mut self, bytes: usize) -> Self {
        self.bytes_per_param = bytes as u64;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.hidden > 0 && self.history > 0 && self.forecast > 0 && self.epochs > 0 && self.bytes_per_param > 0
    }

    pub fn forward_flops(&self) -> u64 {
        let hs = self.hidden;
        self.history * 6 * hs * (1 + hs) + 2 * hs * self.forecast
    }

    pub fn backward_flops(&self) -> u64 {
        2 * self.forward_flops()
    }

    /// `E` epochs of forward plus backward on one window.
    pub fn training_flops(&self) -> u64 {
        self.epochs * (self.forward_flops() + self.backward_flops())
    }

    pub fn kld_flops(&self) -> u64 {
        7 * self.history
    }

    pub fn param_count(&self) -> u64 {
        ModelParams::count(self.hidden as usize, self.forecast as usize) as u64
    }

    /// Bytes for one model transfer in one direction.
    pub fn comm_bytes(&self) -> u64 {
        self.param_count() * self.bytes_per_param
    }

    /// Extra parameters exchanged per round by an encoder-decoder
    /// spatio-temporal baseline: `hs + 3·2hs·(2hs + 2) + (2hs + 1)`.
    pub fn fedostc_extra_params(&self) -> u64 {
        let hs = self.hidden;
        hs + 3 * 2 * hs * (2 * hs + 2) + (2 * hs + 1)
    }

    /// Per client per round: encoder and decoder GRUs plus the extra parameters.
    pub fn fedostc_comm_bytes(&self) -> u64 {
        (2 * self.param_count() + self.fedostc_extra_params()) * self.bytes_per_param
    }
}
