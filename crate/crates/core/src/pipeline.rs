//! Glue between the stages: which data each network is trained on.
//!
//! The implicit decoder is fitted to normalized training parts paired with
//! their PCN codes. The suggestion model is fitted to `(assembly code, part
//! code)` pairs drawn from training shapes.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_psn_samples, seal_latents, Dataset, PartRecord, PsnSample, Shape};
use crate::error::Result;
use crate::geometry::VoxelGrid;
use crate::implicit::{train_implicit, ImplicitConfig, ImplicitReport};
use crate::latent::LatentCode;
use crate::pcn::{train_pcn, PcnModel, PcnTrainConfig, TrainReport};
use crate::psn::{train_psn, PsnConfig, PsnReport};
use crate::synthesis::Models;

/// Normalized parts paired with their codes under `pcn`.
pub fn implicit_pairs<'a>(pcn: &PcnModel, parts: impl IntoIterator<Item = &'a PartRecord>) -> Result<Vec<(VoxelGrid, LatentCode)>> {
    let grids: Vec<&VoxelGrid> = parts.into_iter().map(|p| &p.normalized).collect();
    let codes = pcn.encode_all(&grids)?;
    Ok(grids.into_iter().cloned().zip(codes).collect())
}

/// Training pairs for the implicit decoder: [`implicit_pairs`] plus
/// `config.prior_codes` uniform codes paired with their PCN decodings.
pub fn implicit_training_pairs<'a>(
    pcn: &PcnModel,
    parts: impl IntoIterator<Item = &'a PartRecord>,
    config: &ImplicitConfig,
) -> Result<Vec<(VoxelGrid, LatentCode)>> {
    let mut pairs = implicit_pairs(pcn, parts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E1);
    for _ in 0..config.prior_codes {
        let z = LatentCode::new((0..pcn.latent_dim()).map(|_| rng.gen::<f32>()).collect());
        pairs.push((pcn.decode(&z)?, z));
    }
    Ok(pairs)
}

/// Suggestion-training samples from `shapes`, sealed with codes from `pcn`.
pub fn psn_samples(pcn: &PcnModel, shapes: &[Shape], per_shape: usize, seed: u64) -> Result<Vec<PsnSample>> {
    let drawn = make_psn_samples(shapes, per_shape, seed)?;
    if drawn.skipped > 0 {
        log::info!("{} single-part shapes skipped", drawn.skipped);
    }
    seal_latents(drawn.samples, pcn)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub pcn: PcnTrainConfig,
    pub implicit: ImplicitConfig,
    pub psn: PsnConfig,
    pub per_shape: usize,
    pub sample_seed: u64,
}

impl PipelineConfig {
    /// Very small networks and one or two epochs each; for smoke runs and
    /// tests, not for quality.
    pub fn smoke(kind: crate::psn::Kind) -> Self {
        let pcn = PcnTrainConfig {
            lr_ae: 1e-3,
            lr_stn: 1e-3,
            epochs_joint: 2,
            epochs_stn: 1,
            batch_size: 8,
            seed: 0,
            arch: crate::pcn::PcnArch {
                latent_dim: 16,
                encoder_widths: [2, 4, 4, 8, 8],
                localizer_widths: [2, 4, 4, 4],
                localizer_fc: [16, 8, 8],
            },
        };
        let implicit = ImplicitConfig { width: 32, epochs: 300, lr: 3e-3, points_per_code: 1024, prior_codes: 8, ..ImplicitConfig::default() };
        let mut psn = PsnConfig::reference(kind).with_epochs(2).with_lr(1e-3);
        psn.hidden = 16;
        psn.noise_dim = 4;
        psn.batch_size = 8;
        psn.diffusion_steps = 20;
        psn.beta_end = 0.2;
        psn.unet_widths = [2, 2, 4, 4, 4];
        psn.time_dim = 4;
        Self { pcn, implicit, psn, per_shape: 2, sample_seed: 0 }
    }
}

pub struct TrainedPipeline {
    pub models: Models,
    pub pcn_report: TrainReport,
    pub implicit_report: ImplicitReport,
    pub psn_report: PsnReport,
}

/// Trains the three networks in order on the training split.
pub fn train_all(data: &Dataset, config: &PipelineConfig) -> Result<TrainedPipeline> {
    let parts: Vec<PartRecord> = data.train_parts().cloned().collect();
    let (pcn, pcn_report) = train_pcn(&parts, &config.pcn)?;
    let (implicit, implicit_report) = train_implicit(&implicit_training_pairs(&pcn, &parts, &config.implicit)?, &config.implicit)?;
    let samples = psn_samples(&pcn, &data.train, config.per_shape, config.sample_seed)?;
    let (psn, psn_report) = train_psn(&samples, &config.psn)?;
    let models = Models::new(Arc::new(pcn), Arc::new(implicit), Arc::new(psn))?;
    Ok(TrainedPipeline { models, pcn_report, implicit_report, psn_report })
}

/// File layout of a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointDir(pub std::path::PathBuf);

impl CheckpointDir {
    pub fn pcn(&self) -> std::path::PathBuf {
        self.0.join("pcn.ckpt")
    }

    pub fn implicit(&self) -> std::path::PathBuf {
        self.0.join("implicit.ckpt")
    }

    pub fn psn(&self, kind: crate::psn::Kind) -> std::path::PathBuf {
        self.0.join(format!("psn_{kind}.ckpt"))
    }

    /// Trained models for every suggestion kind with a checkpoint present.
    pub fn load_models(&self) -> Result<std::collections::BTreeMap<crate::psn::Kind, Models>> {
        let pcn = Arc::new(PcnModel::load(self.pcn())?);
        let implicit = Arc::new(crate::implicit::ImplicitModel::load(self.implicit())?);
        let mut out = std::collections::BTreeMap::new();
        for kind in crate::psn::Kind::ALL {
            let path = self.psn(kind);
            if path.exists() {
                let psn = Arc::new(crate::psn::SuggestionModel::load(path)?);
                out.insert(kind, Models::new(pcn.clone(), implicit.clone(), psn)?);
            }
        }
        Ok(out)
    }
}
