//! Positive-sample selection: frozen prior encoders, the embedding bank with
//! exact brute-force neighbor lists, and the live FIFO support queue.

mod bank;
mod prior;
mod queue;

pub use bank::{build_bank, EmbeddingBank};
pub use prior::PriorEncoder;
pub use queue::SupportQueue;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpsMode {
    /// Furthest point inside the squared-distance ball of radius tau.
    TauBall,
    /// Uniform draw among the k nearest neighbors.
    KnnRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Prefer a non-query member of the tie set, lowest id among them.
    PreferNonself,
    /// Lowest id in the tie set, query included.
    LowestId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsConfig {
    pub mode: GpsMode,
    pub tau: f64,
    pub k: usize,
    pub tie_break: TieBreak,
    pub include_self_in_knn: bool,
}

impl Default for GpsConfig {
    fn default() -> Self {
        Self {
            mode: GpsMode::KnnRandom,
            tau: 1.0,
            k: 4,
            tie_break: TieBreak::PreferNonself,
            include_self_in_knn: true,
        }
    }
}

impl GpsConfig {
    /// Check mode-specific bounds against a bank's K_max.
    pub fn validate(&self, k_max: usize) -> Result<()> {
        match self.mode {
            GpsMode::TauBall => {
                if !(self.tau > 0.0) || !self.tau.is_finite() {
                    return Err(Error::Argument(format!("tau must be positive, got {}", self.tau)));
                }
            }
            GpsMode::KnnRandom => {
                if self.k < 1 || self.k > k_max {
                    return Err(Error::Argument(format!(
                        "k must lie in 1..={k_max}, got {}",
                        self.k
                    )));
                }
            }
        }
        Ok(())
    }
}
