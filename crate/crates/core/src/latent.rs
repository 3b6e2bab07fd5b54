use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default latent dimensionality.
pub const LATENT_DIM: usize = 128;

/// A part (or assembly) embedding. Encoder outputs lie in `[0, 1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentCode(pub Vec<f32>);

impl LatentCode {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn clamped(mut self) -> Self {
        self.0.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn in_unit_box(&self) -> bool {
        self.0.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Euclidean distance.
    pub fn distance(&self, other: &LatentCode) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::Shape(format!("latent has {} dims, model expects {d}", self.dim())));
        }
        Ok(())
    }
}

/// Anything that maps voxel grids to latent codes.
pub trait PartEncoder {
    fn encode_batch(&self, grids: &[&crate::geometry::VoxelGrid]) -> Result<Vec<LatentCode>>;
}
