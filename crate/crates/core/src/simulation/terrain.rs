//! Piecewise-constant friction on a square block grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid terrain: {0}")]
pub struct TerrainError(pub String);

/// Square blocks of side `block_size`, each with a friction coefficient drawn
/// uniformly from `[mu_min, mu_max]` by hashing its index with the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainGrid {
    pub block_size: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub seed: u64,
    #[serde(default)]
    pub origin: [f64; 2],
}

impl TerrainGrid {
    pub fn new(block_size: f64, mu_min: f64, mu_max: f64, seed: u64) -> Result<Self, TerrainError> {
        let t = Self { block_size, mu_min, mu_max, seed, origin: [0.0, 0.0] };
        t.validate()?;
        Ok(t)
    }

    /// Every block has friction `mu`.
    pub fn uniform(mu: f64) -> Result<Self, TerrainError> {
        Self::new(1.0, mu, mu, 0)
    }

    pub fn validate(&self) -> Result<(), TerrainError> {
        if !(self.block_size > 0.0 && self.block_size.is_finite()) {
            return Err(TerrainError(format!("block_size must be positive, got {}", self.block_size)));
        }
        if !(self.mu_min > 0.0 && self.mu_min <= self.mu_max && self.mu_max.is_finite()) {
            return Err(TerrainError(format!(
                "need 0 < mu_min <= mu_max, got [{}, {}]",
                self.mu_min, self.mu_max
            )));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(TerrainError("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn block_index(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin[0]) / self.block_size).floor() as i64,
            ((y - self.origin[1]) / self.block_size).floor() as i64,
        )
    }

    pub fn block_friction(&self, i: i64, j: i64) -> f64 {
        if self.mu_min == self.mu_max {
            return self.mu_min;
        }
        let h = mix(mix(mix(self.seed) ^ i as u64) ^ (j as u64).rotate_left(32));
        let unit = (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        self.mu_min + (self.mu_max - self.mu_min) * unit
    }

    /// Friction coefficient at world position `(x, y)`.
    pub fn friction_at(&self, x: f64, y: f64) -> f64 {
        let (i, j) = self.block_index(x, y);
        self.block_friction(i, j)
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
