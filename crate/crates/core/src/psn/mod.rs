//! Part suggestion: conditional generative models mapping the code of a
//! partial assembly to codes of plausible next parts.
//!
//! Four families share one interface, [`SuggestionModel::suggest`]:
//!
//! | kind    | model                                        |
//! |---------|----------------------------------------------|
//! | `mdn`   | mixture density network, diagonal Gaussians  |
//! | `cgan`  | conditional GAN                              |
//! | `cimle` | conditional implicit maximum likelihood      |
//! | `cddpm` | conditional denoising diffusion, 1-D U-Net   |

pub mod cgan;
pub mod cimle;
pub mod ddpm;
pub mod mdn;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dataset::PsnSample;
use crate::error::{Error, Result};
use crate::latent::LatentCode;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{param_count, Act, Activation, Adam, Layer, Linear, Seq};

pub use cgan::{discriminator_loss, Cgan, GanStep};
pub use cimle::{nearest_candidate, Cimle, ImleSelection};
pub use ddpm::{ddpm_q_sample, ddpm_q_step, Cddpm, DiffusionSchedule};
pub use mdn::{mdn_loss, mdn_sample, mdn_sample_components, Mdn, MixtureModel};

/// Fully connected stack with `act` between layers and none after the last.
pub(crate) fn mlp(sizes: &[usize], act: Act, rng: &mut ChaCha8Rng) -> Seq {
    let mut net = Seq::new();
    for (i, w) in sizes.windows(2).enumerate() {
        if i > 0 {
            net = net.push(Activation::new(act));
        }
        net = net.push(Linear::new(w[0], w[1], rng));
    }
    net
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Mdn,
    Cgan,
    Cimle,
    Cddpm,
}

impl Kind {
    pub const ALL: [Kind; 4] = [Kind::Mdn, Kind::Cgan, Kind::Cimle, Kind::Cddpm];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Mdn => "mdn",
            Kind::Cgan => "cgan",
            Kind::Cimle => "cimle",
            Kind::Cddpm => "cddpm",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::InvalidKind(s.to_string()))
    }
}

/// Hyper-parameters for one suggestion model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsnConfig {
    pub kind: Kind,
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// Width of the fully connected hidden layers.
    pub hidden: usize,
    /// Noise size for the GAN and IMLE generators.
    pub noise_dim: usize,
    /// Mixture components for the MDN, candidates per condition for IMLE.
    pub h: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub unet_widths: [usize; 5],
    pub time_dim: usize,
    /// IMLE batches whose candidate selections are kept in the report.
    pub imle_log_batches: usize,
    pub seed: u64,
}

impl PsnConfig {
    /// Learning rate and epoch budget of the reference setup for `kind`.
    pub fn reference(kind: Kind) -> Self {
        let (lr, epochs) = match kind {
            Kind::Mdn => (1e-4, 1000),
            Kind::Cgan => (1e-5, 2000),
            Kind::Cimle => (1e-4, 500),
            Kind::Cddpm => (8e-5, 500_000),
        };
        Self {
            kind,
            lr,
            epochs,
            batch_size: 32,
            hidden: 256,
            noise_dim: 64,
            h: 4,
            diffusion_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            unet_widths: [32, 32, 64, 64, 128],
            time_dim: 32,
            imle_log_batches: 4,
            seed: 0,
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_lr(mut self, lr: f32) -> Self {
        self.lr = lr;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 || self.h == 0 || self.noise_dim == 0 {
            return Err(Error::InvalidArgument("sizes must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.kind == Kind::Cddpm {
            if self.time_dim < 2 || self.time_dim % 2 != 0 {
                return Err(Error::InvalidArgument("time embedding size must be even".into()));
            }
            DiffusionSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)?;
        }
        Ok(())
    }

    fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }
}

enum Net {
    Mdn(Mdn),
    Cgan(Cgan),
    Cimle(Cimle),
    Cddpm(Cddpm),
}

/// What the model was trained on, stored with the checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub samples: usize,
    pub final_loss: Option<f64>,
}

/// Summary printed by `psn-info`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsnInfo {
    pub kind: Kind,
    pub d: usize,
    pub noise_dim: Option<usize>,
    pub h: Option<usize>,
    pub diffusion_steps: Option<usize>,
    pub parameters: usize,
    pub trained: bool,
    pub training: TrainingMeta,
}

pub struct SuggestionModel {
    d: usize,
    config: PsnConfig,
    net: Net,
    trained: bool,
    meta: TrainingMeta,
}

impl SuggestionModel {
    /// Untrained model over `d`-dimensional codes.
    pub fn new(d: usize, config: PsnConfig) -> Result<Self> {
        config.validate()?;
        if d == 0 {
            return Err(Error::InvalidArgument("code size must be positive".into()));
        }
        let c = &config;
        let net = match c.kind {
            Kind::Mdn => Net::Mdn(Mdn::new(d, c.h, c.hidden, c.seed)),
            Kind::Cgan => Net::Cgan(Cgan::new(d, c.noise_dim, c.hidden, c.seed)),
            Kind::Cimle => Net::Cimle(Cimle::new(d, c.noise_dim, c.h, c.hidden, c.seed)),
            Kind::Cddpm => Net::Cddpm(Cddpm::new(d, c.unet_widths, c.time_dim, c.schedule()?, c.seed)?),
        };
        Ok(Self { d, config, net, trained: false, meta: TrainingMeta::default() })
    }

    pub fn kind(&self) -> Kind {
        self.config.kind
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }

    pub fn config(&self) -> &PsnConfig {
        &self.config
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn training(&self) -> &TrainingMeta {
        &self.meta
    }

    /// `k` part codes for the assembly code `y`, each in the unit box.
    pub fn suggest(&self, y: &LatentCode, k: usize, seed: u64) -> Result<Vec<LatentCode>> {
        if !self.trained {
            return Err(Error::ModelNotReady(format!("{} suggestion model is untrained", self.kind())));
        }
        self.sample(y, k, seed)
    }

    /// Same as [`suggest`](Self::suggest) without the trained check.
    pub fn sample(&self, y: &LatentCode, k: usize, seed: u64) -> Result<Vec<LatentCode>> {
        y.check_dim(self.d)?;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.net {
            Net::Mdn(m) => mdn_sample(&m.predict(y)?, k, seed),
            Net::Cgan(g) => Ok((0..k).map(|_| g.generate(y, &cgan::noise(&mut rng, g.noise_dim())).clamped()).collect()),
            Net::Cimle(g) => Ok((0..k).map(|_| g.generate(y, &cgan::noise(&mut rng, g.noise_dim())).clamped()).collect()),
            Net::Cddpm(m) => m.sample(y, k, seed),
        }
    }

    /// The predicted mixture; only for MDN models.
    pub fn mdn_predict(&self, y: &LatentCode) -> Result<MixtureModel> {
        match &self.net {
            Net::Mdn(m) => m.predict(y),
            _ => Err(Error::WrongModel { expected: "mdn".into(), actual: self.kind().to_string() }),
        }
    }

    pub fn cddpm(&self) -> Option<&Cddpm> {
        match &self.net {
            Net::Cddpm(m) => Some(m),
            _ => None,
        }
    }

    fn modules(&self) -> Vec<(&'static str, &dyn Layer)> {
        match &self.net {
            Net::Mdn(m) => vec![("net.", &m.net as &dyn Layer)],
            Net::Cgan(g) => vec![("generator.", &g.generator as &dyn Layer), ("discriminator.", &g.discriminator)],
            Net::Cimle(g) => vec![("generator.", &g.generator as &dyn Layer)],
            Net::Cddpm(m) => vec![("unet.", &m.net as &dyn Layer)],
        }
    }

    fn modules_mut(&mut self) -> Vec<(&'static str, &mut dyn Layer)> {
        match &mut self.net {
            Net::Mdn(m) => vec![("net.", &mut m.net as &mut dyn Layer)],
            Net::Cgan(g) => vec![("generator.", &mut g.generator as &mut dyn Layer), ("discriminator.", &mut g.discriminator)],
            Net::Cimle(g) => vec![("generator.", &mut g.generator as &mut dyn Layer)],
            Net::Cddpm(m) => vec![("unet.", &mut m.net as &mut dyn Layer)],
        }
    }

    pub fn info(&self) -> PsnInfo {
        let k = self.kind();
        PsnInfo {
            kind: k,
            d: self.d,
            noise_dim: matches!(k, Kind::Cgan | Kind::Cimle).then_some(self.config.noise_dim),
            h: matches!(k, Kind::Mdn | Kind::Cimle).then_some(self.config.h),
            diffusion_steps: (k == Kind::Cddpm).then_some(self.config.diffusion_steps),
            parameters: self.modules().iter().map(|(_, m)| param_count(*m)).sum(),
            trained: self.trained,
            training: self.meta.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = Map::new();
        meta.insert("d".into(), json!(self.d));
        meta.insert("trained".into(), json!(self.trained));
        meta.insert("config".into(), serde_json::to_value(&self.config).unwrap());
        meta.insert("training".into(), serde_json::to_value(&self.meta).unwrap());
        let mut ck = Checkpoint::new(self.kind().as_str(), meta);
        for (prefix, m) in self.modules() {
            ck.add_module(prefix, m);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: Kind = ck.kind.parse().map_err(|_| Error::WrongModel {
            expected: "mdn|cgan|cimle|cddpm".into(),
            actual: ck.kind.clone(),
        })?;
        let config: PsnConfig = serde_json::from_value(ck.meta.get("config").cloned().unwrap_or(Value::Null))?;
        if config.kind != kind {
            return Err(Error::Format("kind tag disagrees with config".into()));
        }
        let mut m = Self::new(ck.meta_usize("d")?, config)?;
        for (prefix, module) in m.modules_mut() {
            ck.load_module(prefix, module)?;
        }
        m.trained = ck.meta.get("trained").and_then(Value::as_bool).unwrap_or(false);
        m.meta = serde_json::from_value(ck.meta.get("training").cloned().unwrap_or(Value::Null))?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Per-epoch means over samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsnEpoch {
    pub epoch: usize,
    /// NLL for MDN, discriminator loss for cGAN, selected-candidate MSE for
    /// cIMLE, noise MSE for cDDPM.
    pub loss: f64,
    /// Generator loss (cGAN only).
    pub generator_loss: Option<f64>,
    /// `log D(real) + log(1 - D(fake))` (cGAN only).
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PsnReport {
    pub epochs: Vec<PsnEpoch>,
    pub imle_selections: Vec<ImleSelection>,
}

impl PsnReport {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "epoch,loss,generator_loss,value")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.loss, opt(e.generator_loss), opt(e.value))?;
        }
        Ok(())
    }
}

/// `(y, z)` pairs from sealed samples.
pub fn training_pairs(samples: &[PsnSample]) -> Result<Vec<(LatentCode, LatentCode)>> {
    samples
        .iter()
        .map(|s| match (&s.assembly_code, &s.target_latent) {
            (Some(y), Some(z)) => Ok((y.clone(), z.clone())),
            _ => Err(Error::ModelNotReady("suggestion samples must be sealed with latent codes".into())),
        })
        .collect()
}

/// Trains a suggestion model on sealed samples.
pub fn train_psn(samples: &[PsnSample], config: &PsnConfig) -> Result<(SuggestionModel, PsnReport)> {
    train_psn_pairs(&training_pairs(samples)?, config)
}

/// Trains on explicit `(assembly code, target code)` pairs.
pub fn train_psn_pairs(pairs: &[(LatentCode, LatentCode)], config: &PsnConfig) -> Result<(SuggestionModel, PsnReport)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = pairs[0].0.dim();
    for (y, z) in pairs {
        y.check_dim(d)?;
        z.check_dim(d)?;
    }
    let mut model = SuggestionModel::new(d, config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut opt = Adam::new(config.lr);
    let mut opt_d = Adam::new(config.lr);
    let mut report = PsnReport::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut logged = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut loss_g, mut value) = (0.0, 0.0, 0.0);
        let mut gan_batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let ys: Vec<&LatentCode> = batch.iter().map(|&i| &pairs[i].0).collect();
            let zs: Vec<&LatentCode> = batch.iter().map(|&i| &pairs[i].1).collect();
            let flat = |v: &[&LatentCode]| v.iter().flat_map(|c| c.values().iter().copied()).collect::<Vec<f32>>();
            match &mut model.net {
                Net::Mdn(m) => {
                    loss += m.accumulate(&ys, &zs);
                    opt.step(&mut m.net, 1.0);
                }
                Net::Cgan(g) => {
                    let s = g.step(&flat(&ys), &flat(&zs), &mut rng, &mut opt, &mut opt_d);
                    let b = batch.len() as f64;
                    loss += s.loss_d * b;
                    loss_g += s.loss_g * b;
                    value += s.value * b;
                    gan_batches += 1;
                }
                Net::Cimle(g) => {
                    let log = logged < config.imle_log_batches;
                    let (l, sel) = g.step(&flat(&ys), &flat(&zs), &mut rng, &mut opt, log);
                    if log {
                        logged += 1;
                        report.imle_selections.extend(sel);
                    }
                    loss += l;
                }
                Net::Cddpm(m) => {
                    let yv: Vec<&[f32]> = ys.iter().map(|c| c.values()).collect();
                    let zv: Vec<&[f32]> = zs.iter().map(|c| c.values()).collect();
                    loss += m.step(&yv, &zv, &mut rng, &mut opt);
                }
            }
        }
        let n = pairs.len() as f64;
        if !loss.is_finite() || !loss_g.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let gan = gan_batches > 0;
        report.epochs.push(PsnEpoch {
            epoch,
            loss: loss / n,
            generator_loss: gan.then_some(loss_g / n),
            value: gan.then_some(value / n),
        });
        log::debug!("{} epoch {epoch}: loss {:.5}", config.kind, loss / n);
    }
    model.trained = true;
    model.meta = TrainingMeta {
        epochs: config.epochs,
        samples: pairs.len(),
        final_loss: report.epochs.last().map(|e| e.loss),
    };
    Ok((model, report))
}
