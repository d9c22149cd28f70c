//! Experiment harness for `vanetloc`: survey generation, curve fitting,
//! network sweeps and a simulated drive, all driven by one JSON config and
//! writing byte-stable CSV.
//!
//! Exit codes: 0 ok, 1 usage, 2 data or config error, 3 insufficient data or
//! anchors.

pub mod commands;
pub mod config;
pub mod csvio;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("insufficient: {0}")]
    Insufficient(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Insufficient(_) => 3,
        }
    }
}
