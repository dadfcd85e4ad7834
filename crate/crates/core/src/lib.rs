//! Federated online traffic forecasting with drift-gated participation and
//! graph-weighted aggregation.

pub mod aggregate;
pub mod cost;
pub mod data;
pub mod drift;
pub mod error;
pub mod gru;
pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod sim;

pub use error::{Error, Result};
