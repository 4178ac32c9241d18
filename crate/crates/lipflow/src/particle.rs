//! Particle clouds: the empirical measures the engine transports.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance of a particle cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
    Generated,
}

/// An M×d array of particle positions with provenance and the RNG seed that
/// produced it.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub positions: Array2<f64>,
    pub role: Role,
    pub seed: u64,
}

impl ParticleSet {
    pub fn new(positions: Array2<f64>, role: Role, seed: u64) -> Result<Self> {
        if positions.nrows() == 0 {
            return Err(Error::EmptySample("particle set must have M >= 1".into()));
        }
        Ok(ParticleSet {
            positions,
            role,
            seed,
        })
    }

    /// Number of particles M.
    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.positions.view()
    }

    /// All entries finite. Violated only when a run has been flagged diverged.
    pub fn all_finite(&self) -> bool {
        self.positions.iter().all(|v| v.is_finite())
    }

    /// Same cloud with a different role tag.
    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }
}
