//! Part-based 3D shape synthesis.
//!
//! Shapes are assembled one part at a time. A part composition network learns
//! a latent space of normalized parts together with where each part goes, a
//! part suggestion network proposes several plausible next parts for a partial
//! assembly, and an implicit decoder turns latent codes into occupancy fields.

pub mod dataset;
pub mod commands;
pub mod config;
pub mod error;
pub mod geometry;
pub mod implicit;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod pcn;
pub mod pipeline;
pub mod psn;
pub mod service;
pub mod synthesis;

pub use error::{Error, Result};
pub use latent::{LatentCode, PartEncoder, LATENT_DIM};
