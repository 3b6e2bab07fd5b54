//! Run configuration read from a JSON file.
//!
//! Every section is optional. Missing values come from the selected profile:
//! `desk` (the default) keeps the reference learning rates but trains for a
//! few epochs on a small dataset, `paper` uses the full reference schedule.
//! Unknown keys are rejected and relative paths are resolved against the
//! directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Category, DEFAULT_PER_SHAPE};
use crate::error::{Error, Result};
use crate::implicit::ImplicitConfig;
use crate::metrics::SURFACE_POINTS;
use crate::pcn::PcnTrainConfig;
use crate::pipeline::PipelineConfig;
use crate::psn::{Kind, PsnConfig};
use crate::synthesis::SynthesisConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::InvalidArgument(format!("unknown profile `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub category: Category,
    pub shapes: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Suggestion-training samples drawn per shape.
    pub per_shape: usize,
    pub dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            category: Category::Chair,
            shapes: 40,
            resolution: crate::geometry::DEFAULT_RESOLUTION,
            seed: 0,
            per_shape: DEFAULT_PER_SHAPE,
            dir: PathBuf::from("data"),
        }
    }
}

/// Overrides for the suggestion model; unset fields follow the profile.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsnSection {
    pub kind: Option<Kind>,
    pub lr: Option<f32>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub hidden: Option<usize>,
    pub noise_dim: Option<usize>,
    pub h: Option<usize>,
    pub diffusion_steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub surface_points: usize,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { surface_points: SURFACE_POINTS, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub checkpoints: PathBuf,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { checkpoints: PathBuf::from("checkpoints"), output: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub data: DataConfig,
    pub pcn: Option<PcnTrainConfig>,
    pub implicit: Option<ImplicitConfig>,
    pub psn: PsnSection,
    pub synthesis: SynthesisConfig,
    pub metrics: MetricsConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Reads a config file and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.dir, &mut self.paths.checkpoints, &mut self.paths.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Pins every seed in the file to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.metrics.seed = seed;
        self.psn.seed = Some(seed);
        self.pcn = Some(PcnTrainConfig { seed, ..self.pcn_config() });
        self.implicit = Some(ImplicitConfig { seed, ..self.implicit_config() });
        self
    }

    pub fn pcn_config(&self) -> PcnTrainConfig {
        self.pcn.clone().unwrap_or_else(|| match self.profile {
            Profile::Desk => PcnTrainConfig { epochs_joint: 30, epochs_stn: 15, ..PcnTrainConfig::default() },
            Profile::Paper => PcnTrainConfig::full(),
        })
    }

    pub fn implicit_config(&self) -> ImplicitConfig {
        self.implicit.clone().unwrap_or_else(|| match self.profile {
            Profile::Desk => ImplicitConfig::default(),
            Profile::Paper => ImplicitConfig { epochs: 200, ..ImplicitConfig::default() },
        })
    }

    pub fn psn_kind(&self) -> Kind {
        self.psn.kind.unwrap_or(Kind::Cimle)
    }

    /// Suggestion-model settings for `kind`: profile defaults, then the
    /// overrides of the `psn` section.
    pub fn psn_config(&self, kind: Kind) -> PsnConfig {
        let mut c = PsnConfig::reference(kind);
        if self.profile == Profile::Desk {
            c.epochs = desk_epochs(kind);
        }
        let o = &self.psn;
        if let Some(v) = o.lr {
            c.lr = v;
        }
        if let Some(v) = o.epochs {
            c.epochs = v;
        }
        if let Some(v) = o.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = o.hidden {
            c.hidden = v;
        }
        if let Some(v) = o.noise_dim {
            c.noise_dim = v;
        }
        if let Some(v) = o.h {
            c.h = v;
        }
        if let Some(v) = o.diffusion_steps {
            c.diffusion_steps = v;
        }
        if let Some(v) = o.seed {
            c.seed = v;
        }
        c
    }

    pub fn pipeline(&self, kind: Kind) -> PipelineConfig {
        PipelineConfig {
            pcn: self.pcn_config(),
            implicit: self.implicit_config(),
            psn: self.psn_config(kind),
            per_shape: self.data.per_shape,
            sample_seed: self.data.seed,
        }
    }
}

/// Short schedules for the desk profile.
pub fn desk_epochs(kind: Kind) -> usize {
    match kind {
        Kind::Mdn => 100,
        Kind::Cgan => 200,
        Kind::Cimle => 100,
        Kind::Cddpm => 200,
    }
}
