use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Named parameter blocks, in storage (and wire) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    WUpdate,
    WReset,
    WCandidate,
    UUpdate,
    UReset,
    UCandidate,
    BUpdate,
    BReset,
    BCandidate,
    /// `[hs x F]`, row-major.
    VOut,
    BOut,
}

impl Block {
    pub const ALL: [Block; 11] = [
        Block::WUpdate,
        Block::WReset,
        Block::WCandidate,
        Block::UUpdate,
        Block::UReset,
        Block::UCandidate,
        Block::BUpdate,
        Block::BReset,
        Block::BCandidate,
        Block::VOut,
        Block::BOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::WUpdate => "W_u",
            Block::WReset => "W_r",
            Block::WCandidate => "W_h",
            Block::UUpdate => "U_u",
            Block::UReset => "U_r",
            Block::UCandidate => "U_h",
            Block::BUpdate => "b_u",
            Block::BReset => "b_r",
            Block::BCandidate => "b_h",
            Block::VOut => "V_out",
            Block::BOut => "b_out",
        }
    }

    fn len(self, hs: usize, f: usize) -> usize {
        match self {
            Block::WUpdate | Block::WReset | Block::WCandidate => hs,
            Block::UUpdate | Block::UReset | Block::UCandidate => hs * hs,
            Block::BUpdate | Block::BReset | Block::BCandidate => hs,
            Block::VOut => hs * f,
            Block::BOut => f,
        }
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            Block::BUpdate | Block::BReset | Block::BCandidate | Block::BOut
        )
    }
}

/// Flat parameter vector of one GRU forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    hidden: usize,
    forecast: usize,
    values: Vec<f64>,
}

impl ModelParams {
    /// `3 hs (hs + 2) + F (hs + 1)`.
    pub fn count(hidden: usize, forecast: usize) -> usize {
        3 * hidden * (hidden + 2) + forecast * (hidden + 1)
    }

    pub fn zeros(hidden: usize, forecast: usize) -> Self {
        Self {
            hidden,
            forecast,
            values: vec![0.0; Self::count(hidden, forecast)],
        }
    }

    /// Weights uniform in `[-1/sqrt(hs), 1/sqrt(hs)]`, biases zero.
    pub fn init(seed: u64, hidden: usize, forecast: usize) -> Result<Self, ModelError> {
        if hidden == 0 || forecast == 0 {
            return Err(ModelError::Hyper(format!(
                "hidden size {hidden} and forecast {forecast} must be positive"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(hidden, forecast);
        for block in Block::ALL {
            if block.is_bias() {
                continue;
            }
            for v in p.block_mut(block) {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(p)
    }

    pub(crate) fn from_values(hidden: usize, forecast: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        let expected = Self::count(hidden, forecast);
        if values.len() != expected {
            return Err(ModelError::Length {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            hidden,
            forecast,
            values,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn forecast(&self) -> usize {
        self.forecast
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn offset(&self, block: Block) -> (usize, usize) {
        let mut start = 0;
        for b in Block::ALL {
            let len = b.len(self.hidden, self.forecast);
            if b == block {
                return (start, len);
            }
            start += len;
        }
        unreachable!()
    }

    pub fn block(&self, block: Block) -> &[f64] {
        let (start, len) = self.offset(block);
        &self.values[start..start + len]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let (start, len) = self.offset(block);
        &mut self.values[start..start + len]
    }

    pub fn same_shape(&self, other: &Self) -> Result<(), ModelError> {
        if self.hidden != other.hidden || self.forecast != other.forecast {
            return Err(ModelError::Shape(
                self.hidden,
                self.forecast,
                other.hidden,
                other.forecast,
            ));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelParams::count(128, 1), 50_049);
        assert_eq!(ModelParams::count(128, 1), 3 * 128 * 130 + 129);
        assert_eq!(ModelParams::count(1, 1), 11);
        assert_eq!(ModelParams::count(4, 3), 3 * 4 * 6 + 3 * 5);
        let p = ModelParams::zeros(5, 2);
        let total: usize = Block::ALL.iter().map(|b| p.block(*b).len()).sum();
        assert_eq!(total, p.len());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::init(7, 16, 1).unwrap();
        assert_eq!(a, ModelParams::init(7, 16, 1).unwrap());
        assert_ne!(a, ModelParams::init(8, 16, 1).unwrap());
        assert!(a.as_slice().iter().all(|v| v.abs() <= 0.25));
        assert!(a.block(Block::BUpdate).iter().all(|&v| v == 0.0));
        assert!(a.block(Block::BOut).iter().all(|&v| v == 0.0));
        assert!(a.block(Block::UReset).iter().any(|&v| v != 0.0));
        assert!(ModelParams::init(1, 0, 1).is_err());
    }

    #[test]
    fn shape_check() {
        let a = ModelParams::zeros(3, 1);
        assert!(a.same_shape(&ModelParams::zeros(3, 1)).is_ok());
        assert!(a.same_shape(&ModelParams::zeros(3, 2)).is_err());
    }
}
