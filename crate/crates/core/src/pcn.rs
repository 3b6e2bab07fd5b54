//! Part composition network: a volumetric autoencoder that embeds normalized
//! parts in a sigmoid-bounded latent space, plus a localization network that
//! regresses the uniform scale and translation placing a reconstructed part
//! in its assembly.
//!
//! At resolution `R` the encoder has five convolution stages; the first
//! `log2(R / 4)` halve the grid (kernel 4, stride 2) and the rest keep it at
//! `4^3` (kernel 3). A fully connected layer with a sigmoid produces the code.
//! The decoder mirrors the encoder with transposed convolutions. The
//! localizer has four convolution stages and four fully connected layers; its
//! first output is a log-scale, so the predicted scale is always positive.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dataset::PartRecord;
use crate::error::{Error, Result};
use crate::geometry::{apply_affine, warp_backward, warp_forward, AffineTransform, VoxelGrid};
use crate::latent::{LatentCode, PartEncoder};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Act, Activation, Adam, BatchNorm, Conv3d, ConvTranspose3d, Layer, Linear, Reshape, Seq, Tensor};

pub const CHECKPOINT_KIND: &str = "pcn";

const INFER_CHUNK: usize = 32;
const INITIAL_SCALE: f32 = 0.65;

/// Channel widths of the three sub-networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcnArch {
    pub latent_dim: usize,
    pub encoder_widths: [usize; 5],
    pub localizer_widths: [usize; 4],
    pub localizer_fc: [usize; 3],
}

impl Default for PcnArch {
    fn default() -> Self {
        Self {
            latent_dim: crate::latent::LATENT_DIM,
            encoder_widths: [8, 16, 32, 64, 64],
            localizer_widths: [8, 16, 32, 32],
            localizer_fc: [128, 64, 32],
        }
    }
}

/// Training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcnTrainConfig {
    pub lr_ae: f32,
    pub lr_stn: f32,
    pub epochs_joint: usize,
    pub epochs_stn: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub arch: PcnArch,
}

impl Default for PcnTrainConfig {
    fn default() -> Self {
        Self {
            lr_ae: 1e-4,
            lr_stn: 1e-6,
            epochs_joint: 100,
            epochs_stn: 50,
            batch_size: 16,
            seed: 0,
            arch: PcnArch::default(),
        }
    }
}

impl PcnTrainConfig {
    /// Full-length schedule: 1000 joint epochs followed by 500 localizer epochs.
    pub fn full() -> Self {
        Self { epochs_joint: 1000, epochs_stn: 500, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_ae > 0.0 && self.lr_stn > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.arch.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Joint,
    Stn,
}

/// Number of stride-2 stages taking `r` down to 4.
fn down_stages(r: usize) -> Result<usize> {
    if !r.is_power_of_two() || !(8..=64).contains(&r) {
        return Err(Error::InvalidArgument(format!("resolution {r} must be a power of two in 8..=64")));
    }
    Ok(r.trailing_zeros() as usize - 2)
}

fn conv_stage(cin: usize, cout: usize, down: bool, rng: &mut ChaCha8Rng) -> Conv3d {
    if down {
        Conv3d::cubic(cin, cout, 4, 2, 1, rng)
    } else {
        Conv3d::cubic(cin, cout, 3, 1, 1, rng)
    }
}

fn deconv_stage(cin: usize, cout: usize, up: bool, rng: &mut ChaCha8Rng) -> ConvTranspose3d {
    if up {
        ConvTranspose3d::cubic(cin, cout, 4, 2, 1, rng)
    } else {
        ConvTranspose3d::cubic(cin, cout, 3, 1, 1, rng)
    }
}

fn build_encoder(arch: &PcnArch, n_down: usize, rng: &mut ChaCha8Rng) -> Seq {
    let w = arch.encoder_widths;
    let mut seq = Seq::new();
    let mut cin = 1;
    for (i, &c) in w.iter().enumerate() {
        seq = seq
            .push(conv_stage(cin, c, i < n_down, rng))
            .push(BatchNorm::new(c))
            .push(Activation::new(Act::Relu));
        cin = c;
    }
    seq.push(Reshape::new(vec![w[4] * 64]))
        .push(Linear::new(w[4] * 64, arch.latent_dim, rng))
        .push(Activation::new(Act::Sigmoid))
}

fn build_decoder(arch: &PcnArch, n_down: usize, rng: &mut ChaCha8Rng) -> Seq {
    let w = arch.encoder_widths;
    let mut seq = Seq::new()
        .push(Linear::new(arch.latent_dim, w[4] * 64, rng))
        .push(Reshape::new(vec![w[4], 4, 4, 4]))
        .push(BatchNorm::new(w[4]))
        .push(Activation::new(Act::Relu));
    for i in (0..5).rev() {
        let cout = if i == 0 { 1 } else { w[i - 1] };
        seq = seq.push(deconv_stage(w[i], cout, i < n_down, rng));
        if i > 0 {
            seq = seq.push(BatchNorm::new(cout)).push(Activation::new(Act::Relu));
        }
    }
    seq.push(Activation::new(Act::Sigmoid))
}

fn build_localizer(arch: &PcnArch, n_down: usize, rng: &mut ChaCha8Rng) -> Seq {
    let w = arch.localizer_widths;
    let f = arch.localizer_fc;
    let mut seq = Seq::new();
    let mut cin = 1;
    for (i, &c) in w.iter().enumerate() {
        seq = seq
            .push(conv_stage(cin, c, i < n_down, rng))
            .push(BatchNorm::new(c))
            .push(Activation::new(Act::Relu));
        cin = c;
    }
    seq.push(Reshape::new(vec![w[3] * 64]))
        .push(Linear::new(w[3] * 64, f[0], rng))
        .push(Activation::new(Act::Relu))
        .push(Linear::new(f[0], f[1], rng))
        .push(Activation::new(Act::Relu))
        .push(Linear::new(f[1], f[2], rng))
        .push(Activation::new(Act::Relu))
        .push(Linear::zeroed(f[2], 4).with_bias(vec![INITIAL_SCALE.ln(), 0.0, 0.0, 0.0]))
}

/// A (possibly untrained) part composition network.
pub struct PcnModel {
    resolution: usize,
    arch: PcnArch,
    stage: Stage,
    encoder: Seq,
    decoder: Seq,
    localizer: Seq,
}

pub(crate) fn grid_batch(grids: &[&VoxelGrid]) -> Tensor {
    let r = grids.first().map_or(0, |g| g.resolution());
    let mut data = Vec::with_capacity(grids.len() * r * r * r);
    for g in grids {
        data.extend_from_slice(g.values());
    }
    Tensor::new(vec![grids.len(), 1, r, r, r], data)
}

fn output_transform(o: &[f32]) -> AffineTransform {
    AffineTransform {
        scale: (o[0] as f64).exp(),
        translation: [o[1] as f64, o[2] as f64, o[3] as f64],
    }
}

impl PcnModel {
    pub fn new(resolution: usize, arch: PcnArch, seed: u64) -> Result<Self> {
        let n_down = down_stages(resolution)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            resolution,
            encoder: build_encoder(&arch, n_down, &mut rng),
            decoder: build_decoder(&arch, n_down, &mut rng),
            localizer: build_localizer(&arch, n_down, &mut rng),
            arch,
            stage: Stage::Init,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn arch(&self) -> &PcnArch {
        &self.arch
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn is_trained(&self) -> bool {
        self.stage != Stage::Init
    }

    fn check(&self, g: &VoxelGrid) -> Result<()> {
        if g.resolution() != self.resolution {
            return Err(Error::ResolutionMismatch { expected: self.resolution, actual: g.resolution() });
        }
        Ok(())
    }

    pub fn encode(&self, part: &VoxelGrid) -> Result<LatentCode> {
        Ok(self.encode_all(&[part])?.remove(0))
    }

    pub fn encode_all(&self, parts: &[&VoxelGrid]) -> Result<Vec<LatentCode>> {
        let mut out = Vec::with_capacity(parts.len());
        for chunk in parts.chunks(INFER_CHUNK) {
            for g in chunk {
                self.check(g)?;
            }
            let z = self.encoder.forward(&grid_batch(chunk));
            out.extend((0..z.batch()).map(|b| LatentCode::new(z.item(b).to_vec())));
        }
        Ok(out)
    }

    pub fn decode(&self, z: &LatentCode) -> Result<VoxelGrid> {
        Ok(self.decode_all(std::slice::from_ref(z))?.remove(0))
    }

    pub fn decode_all(&self, codes: &[LatentCode]) -> Result<Vec<VoxelGrid>> {
        let d = self.arch.latent_dim;
        let mut out = Vec::with_capacity(codes.len());
        for chunk in codes.chunks(INFER_CHUNK) {
            let mut data = Vec::with_capacity(chunk.len() * d);
            for z in chunk {
                z.check_dim(d)?;
                data.extend_from_slice(z.values());
            }
            let y = self.decoder.forward(&Tensor::new(vec![chunk.len(), d], data));
            for b in 0..y.batch() {
                out.push(VoxelGrid::from_values(self.resolution, y.item(b).to_vec())?);
            }
        }
        Ok(out)
    }

    pub fn localize(&self, part_hat: &VoxelGrid) -> Result<AffineTransform> {
        Ok(self.localize_all(&[part_hat])?.remove(0))
    }

    pub fn localize_all(&self, parts: &[&VoxelGrid]) -> Result<Vec<AffineTransform>> {
        let mut out = Vec::with_capacity(parts.len());
        for chunk in parts.chunks(INFER_CHUNK) {
            for g in chunk {
                self.check(g)?;
            }
            let o = self.localizer.forward(&grid_batch(chunk));
            out.extend((0..o.batch()).map(|b| output_transform(o.item(b))));
        }
        Ok(out)
    }

    /// Decodes `z`, localizes the reconstruction and warps it into place.
    /// Returns the normalized part, its placement and the placed part.
    pub fn place(&self, z: &LatentCode) -> Result<(VoxelGrid, AffineTransform, VoxelGrid)> {
        let p_hat = self.decode(z)?;
        let xf = self.localize(&p_hat)?;
        let placed = apply_affine(&p_hat, &xf)?;
        Ok((p_hat, xf, placed))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = Map::new();
        meta.insert("R".into(), json!(self.resolution));
        meta.insert("d".into(), json!(self.arch.latent_dim));
        meta.insert("stage".into(), serde_json::to_value(self.stage).unwrap());
        meta.insert("config".into(), serde_json::to_value(&self.arch).unwrap());
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        ck.add_module("encoder.", &self.encoder);
        ck.add_module("decoder.", &self.decoder);
        ck.add_module("localizer.", &self.localizer);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(&[CHECKPOINT_KIND])?;
        let r = ck.meta_usize("R")?;
        let arch: PcnArch = serde_json::from_value(ck.meta.get("config").cloned().unwrap_or(Value::Null))?;
        if arch.latent_dim != ck.meta_usize("d")? {
            return Err(Error::Format("latent size disagrees with config".into()));
        }
        let stage: Stage = serde_json::from_value(ck.meta.get("stage").cloned().unwrap_or(Value::Null))?;
        let mut m = Self::new(r, arch, 0)?;
        ck.load_module("encoder.", &mut m.encoder)?;
        ck.load_module("decoder.", &mut m.decoder)?;
        ck.load_module("localizer.", &mut m.localizer)?;
        m.stage = stage;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl PartEncoder for PcnModel {
    fn encode_batch(&self, grids: &[&VoxelGrid]) -> Result<Vec<LatentCode>> {
        if !self.is_trained() {
            return Err(Error::ModelNotReady("part composition network is untrained".into()));
        }
        self.encode_all(grids)
    }
}

/// The four terms of the composition loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcnLoss {
    pub reconstruction: f64,
    pub placement: f64,
    pub scale: f64,
    pub translation: f64,
}

impl PcnLoss {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.placement + self.scale + self.translation
    }
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// `MSE(P, P̂) + MSE(P', P̂') + |s - ŝ| + ||t - t̂||` for one part.
pub fn pcn_loss(
    record: &PartRecord,
    p_hat: &VoxelGrid,
    p_prime_hat: &VoxelGrid,
    s_hat: f64,
    t_hat: [f64; 3],
) -> Result<PcnLoss> {
    let r = record.normalized.resolution();
    for g in [&record.transformed, p_hat, p_prime_hat] {
        if g.resolution() != r {
            return Err(Error::ResolutionMismatch { expected: r, actual: g.resolution() });
        }
    }
    Ok(PcnLoss {
        reconstruction: mse(record.normalized.values(), p_hat.values()),
        placement: mse(record.transformed.values(), p_prime_hat.values()),
        scale: (record.xf.scale - s_hat).abs(),
        translation: dist3(record.xf.translation, t_hat),
    })
}

/// Placement part of the loss and its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct StnTerms {
    pub loss: f64,
    pub d_input: Vec<f64>,
    pub d_scale: f64,
    pub d_translation: [f64; 3],
}

/// `MSE(P', warp(P̂; ŝ, t̂)) + |s - ŝ| + ||t - t̂||` with gradients with
/// respect to the warped input and the predicted placement.
pub fn stn_terms(
    p_hat: &[f64],
    p_prime: &[f64],
    r: usize,
    xf: &AffineTransform,
    s_hat: f64,
    t_hat: [f64; 3],
) -> StnTerms {
    let n = p_prime.len() as f64;
    let warped = warp_forward(p_hat, r, s_hat, t_hat);
    let mut loss = 0.0;
    let grad_out: Vec<f64> = warped
        .iter()
        .zip(p_prime)
        .map(|(&w, &p)| {
            loss += (w - p).powi(2) / n;
            2.0 * (w - p) / n
        })
        .collect();
    let (d_input, mut d_scale, mut d_translation) = warp_backward(p_hat, r, s_hat, t_hat, &grad_out);
    loss += (s_hat - xf.scale).abs();
    if s_hat != xf.scale {
        d_scale += (s_hat - xf.scale).signum();
    }
    let dt = dist3(t_hat, xf.translation);
    loss += dt;
    if dt > 0.0 {
        for a in 0..3 {
            d_translation[a] += (t_hat[a] - xf.translation[a]) / dt;
        }
    }
    StnTerms { loss, d_input, d_scale, d_translation }
}

/// Mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub stage: Stage,
    pub loss_ae: f64,
    pub loss_stn: f64,
}

impl EpochLoss {
    pub fn total(&self) -> f64 {
        self.loss_ae + self.loss_stn
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
}

impl TrainReport {
    /// CSV with header `epoch,loss_AE,loss_STN`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,loss_AE,loss_STN")?;
        for e in &self.epochs {
            writeln!(w, "{},{:.8},{:.8}", e.epoch, e.loss_ae, e.loss_stn)?;
        }
        Ok(())
    }
}

struct Optims {
    encoder: Adam,
    decoder: Adam,
    localizer: Adam,
}

/// Two-stage training: the whole network on the full loss, then the
/// localizer alone with the autoencoder frozen.
pub fn train_pcn(parts: &[PartRecord], config: &PcnTrainConfig) -> Result<(PcnModel, TrainReport)> {
    config.validate()?;
    let first = parts.first().ok_or(Error::EmptyDataset)?;
    let r = first.normalized.resolution();
    let mut model = PcnModel::new(r, config.arch.clone(), config.seed)?;
    for p in parts {
        model.check(&p.normalized)?;
        model.check(&p.transformed)?;
    }
    let mut report = TrainReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED);
    let mut opt = Optims {
        encoder: Adam::new(config.lr_ae),
        decoder: Adam::new(config.lr_ae),
        localizer: Adam::new(config.lr_stn),
    };
    let mut order: Vec<usize> = (0..parts.len()).collect();
    for epoch in 0..config.epochs_joint {
        order.shuffle(&mut rng);
        let (mut ae, mut stn) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let (a, s) = joint_step(&mut model, &mut opt, parts, batch);
            ae += a;
            stn += s;
        }
        push_epoch(&mut report, epoch, Stage::Joint, ae / parts.len() as f64, stn / parts.len() as f64)?;
        model.stage = Stage::Joint;
    }
    if config.epochs_stn > 0 {
        // the autoencoder is frozen, so its reconstructions never change
        let all: Vec<&VoxelGrid> = parts.iter().map(|p| &p.normalized).collect();
        let codes = model.encode_all(&all)?;
        let recon = model.decode_all(&codes)?;
        for e in 0..config.epochs_stn {
            order.shuffle(&mut rng);
            let mut stn = 0.0;
            for batch in order.chunks(config.batch_size) {
                stn += stn_step(&mut model, &mut opt, parts, &recon, batch);
            }
            let ae = recon.iter().zip(parts).map(|(g, p)| mse(g.values(), p.normalized.values())).sum::<f64>();
            let epoch = config.epochs_joint + e;
            push_epoch(&mut report, epoch, Stage::Stn, ae / parts.len() as f64, stn / parts.len() as f64)?;
            model.stage = Stage::Stn;
        }
    }
    Ok((model, report))
}

fn push_epoch(report: &mut TrainReport, epoch: usize, stage: Stage, loss_ae: f64, loss_stn: f64) -> Result<()> {
    if !(loss_ae.is_finite() && loss_stn.is_finite()) {
        return Err(Error::Divergence { epoch });
    }
    log::info!("pcn epoch {epoch} ({stage:?}): ae {loss_ae:.6} stn {loss_stn:.6}");
    report.epochs.push(EpochLoss { epoch, stage, loss_ae, loss_stn });
    Ok(())
}

/// Gradient of the localizer outputs from the placement terms; also returns
/// the summed loss and, per item, the gradient on the localizer's input grid.
fn placement_grads(
    o: &Tensor,
    p_hat: &Tensor,
    parts: &[PartRecord],
    batch: &[usize],
    r: usize,
) -> (f64, Tensor, Vec<Vec<f64>>) {
    let b = batch.len();
    let mut loss = 0.0;
    let mut d_o = vec![0.0f32; b * 4];
    let mut d_inputs = Vec::with_capacity(b);
    for (k, &i) in batch.iter().enumerate() {
        let rec = &parts[i];
        let xf_hat = output_transform(o.item(k));
        let input: Vec<f64> = p_hat.item(k).iter().map(|&v| v as f64).collect();
        let target: Vec<f64> = rec.transformed.values().iter().map(|&v| v as f64).collect();
        let t = stn_terms(&input, &target, r, &rec.xf, xf_hat.scale, xf_hat.translation);
        loss += t.loss;
        d_o[k * 4] = (t.d_scale * xf_hat.scale) as f32 / b as f32;
        for a in 0..3 {
            d_o[k * 4 + 1 + a] = t.d_translation[a] as f32 / b as f32;
        }
        d_inputs.push(t.d_input);
    }
    (loss, Tensor::new(vec![b, 4], d_o), d_inputs)
}

fn joint_step(model: &mut PcnModel, opt: &mut Optims, parts: &[PartRecord], batch: &[usize]) -> (f64, f64) {
    let r = model.resolution;
    let b = batch.len();
    let x = grid_batch(&batch.iter().map(|&i| &parts[i].normalized).collect::<Vec<_>>());
    let z = model.encoder.forward_train(&x);
    let p_hat = model.decoder.forward_train(&z);
    let o = model.localizer.forward_train(&p_hat);
    let (stn, d_o, d_inputs) = placement_grads(&o, &p_hat, parts, batch, r);
    // the localizer sees the reconstruction as a constant input
    model.localizer.backward(&d_o);

    let n = (r * r * r) as f64;
    let mut ae = 0.0;
    let mut d_p = vec![0.0f32; p_hat.data().len()];
    for (k, &i) in batch.iter().enumerate() {
        let target = parts[i].normalized.values();
        let item = p_hat.item(k);
        ae += mse(target, item);
        let dst = &mut d_p[k * item.len()..(k + 1) * item.len()];
        for j in 0..item.len() {
            let g = 2.0 * (item[j] as f64 - target[j] as f64) / n + d_inputs[k][j];
            dst[j] = g as f32 / b as f32;
        }
    }
    let dz = model.decoder.backward(&Tensor::new(p_hat.shape().to_vec(), d_p));
    model.encoder.backward(&dz);
    opt.encoder.step(&mut model.encoder, 1.0);
    opt.decoder.step(&mut model.decoder, 1.0);
    opt.localizer.step(&mut model.localizer, 1.0);
    (ae, stn)
}

fn stn_step(
    model: &mut PcnModel,
    opt: &mut Optims,
    parts: &[PartRecord],
    recon: &[VoxelGrid],
    batch: &[usize],
) -> f64 {
    let r = model.resolution;
    let p_hat = grid_batch(&batch.iter().map(|&i| &recon[i]).collect::<Vec<_>>());
    let o = model.localizer.forward_train(&p_hat);
    let (stn, d_o, _) = placement_grads(&o, &p_hat, parts, batch, r);
    model.localizer.backward(&d_o);
    opt.localizer.step(&mut model.localizer, 1.0);
    stn
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_dataset, Category};

    fn tiny() -> PcnArch {
        PcnArch {
            latent_dim: 16,
            encoder_widths: [2, 4, 4, 8, 8],
            localizer_widths: [2, 4, 4, 4],
            localizer_fc: [16, 8, 8],
        }
    }

    fn record(r: usize) -> PartRecord {
        let d = make_dataset(Category::Chair, 5, 1, r).unwrap();
        d.train[0].parts[0].clone()
    }

    #[test]
    fn encoder_output_is_bounded_and_deterministic() {
        let m = PcnModel::new(16, tiny(), 3).unwrap();
        let rec = record(16);
        let z = m.encode(&rec.normalized).unwrap();
        assert_eq!(z.dim(), 16);
        assert!(z.in_unit_box());
        assert_eq!(z, m.encode(&rec.normalized).unwrap());
        let g = m.decode(&z).unwrap();
        assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(g, m.decode(&z).unwrap());
        assert!(m.localize(&g).unwrap().scale > 0.0);
    }

    #[test]
    fn mismatches_are_rejected() {
        let m = PcnModel::new(16, tiny(), 3).unwrap();
        assert!(matches!(m.encode(&VoxelGrid::zeros(8)), Err(Error::ResolutionMismatch { .. })));
        assert!(matches!(m.localize(&VoxelGrid::zeros(32)), Err(Error::ResolutionMismatch { .. })));
        assert!(matches!(m.decode(&LatentCode::new(vec![0.5; 3])), Err(Error::Shape(_))));
        assert!(PcnModel::new(12, tiny(), 0).is_err());
    }

    #[test]
    fn untrained_encoder_is_not_ready() {
        let m = PcnModel::new(8, tiny(), 0).unwrap();
        assert!(matches!(m.encode_batch(&[&VoxelGrid::zeros(8)]), Err(Error::ModelNotReady(_))));
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let rec = record(16);
        let l = pcn_loss(&rec, &rec.normalized, &rec.transformed, rec.xf.scale, rec.xf.translation).unwrap();
        assert_eq!(l.total(), 0.0);
    }

    #[test]
    fn scale_off_by_one_costs_one() {
        let rec = record(16);
        let l = pcn_loss(&rec, &rec.normalized, &rec.transformed, rec.xf.scale + 1.0, rec.xf.translation).unwrap();
        assert!((l.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_prediction_costs_two_k_over_n() {
        // a part whose normalized and placed grids both hold k unit voxels
        let r = 8;
        let mut g = VoxelGrid::zeros(r);
        let k = 5;
        for i in 0..k {
            g.set(i, 2, 3, 1.0);
        }
        let rec = PartRecord {
            label: crate::dataset::PartLabel::Seat,
            normalized: g.clone(),
            transformed: g,
            xf: AffineTransform::IDENTITY,
            shape_id: 0,
        };
        let zero = VoxelGrid::zeros(r);
        let l = pcn_loss(&rec, &zero, &zero, 1.0, [0.0; 3]).unwrap();
        assert!((l.total() - 2.0 * k as f64 / (r * r * r) as f64).abs() < 1e-15);
    }

    #[test]
    fn loss_is_sum_of_independent_terms() {
        let rec = record(16);
        let m = PcnModel::new(16, tiny(), 1).unwrap();
        let (p_hat, xf, placed) = m.place(&m.encode(&rec.normalized).unwrap()).unwrap();
        let l = pcn_loss(&rec, &p_hat, &placed, xf.scale, xf.translation).unwrap();
        let n = (16 * 16 * 16) as f64;
        let a: f64 = rec.normalized.values().iter().zip(p_hat.values()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / n;
        let b: f64 = rec.transformed.values().iter().zip(placed.values()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / n;
        let c = (xf.scale - rec.xf.scale).abs();
        let d = (0..3).map(|i| (xf.translation[i] - rec.xf.translation[i]).powi(2)).sum::<f64>().sqrt();
        assert!((l.total() - (a + b + c + d)).abs() < 1e-9);
    }

    #[test]
    fn stn_gradient_matches_finite_differences() {
        let r = 4;
        let p_hat: Vec<f64> = (0..64).map(|i| ((i * 37 % 17) as f64) / 17.0).collect();
        let p_prime: Vec<f64> = (0..64).map(|i| ((i * 11 % 13) as f64) / 13.0).collect();
        let xf = AffineTransform::new(0.7, [0.05, -0.1, 0.02]).unwrap();
        let (s, t) = (0.9, [0.11, 0.07, -0.13]);
        let g = stn_terms(&p_hat, &p_prime, r, &xf, s, t);
        let eps = 1e-4;
        let f = |s: f64, t: [f64; 3]| stn_terms(&p_hat, &p_prime, r, &xf, s, t).loss;
        let fd_s = (f(s + eps, t) - f(s - eps, t)) / (2.0 * eps);
        assert!((fd_s - g.d_scale).abs() / fd_s.abs().max(1e-8) < 1e-3, "{fd_s} vs {}", g.d_scale);
        for a in 0..3 {
            let (mut tp, mut tm) = (t, t);
            tp[a] += eps;
            tm[a] -= eps;
            let fd = (f(s, tp) - f(s, tm)) / (2.0 * eps);
            assert!((fd - g.d_translation[a]).abs() / fd.abs().max(1e-8) < 1e-3, "axis {a}: {fd} vs {}", g.d_translation[a]);
        }
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let d = make_dataset(Category::Chair, 5, 2, 8).unwrap();
        let parts: Vec<PartRecord> = d.train_parts().cloned().collect();
        let cfg = PcnTrainConfig { epochs_joint: 0, epochs_stn: 0, arch: tiny(), seed: 4, ..Default::default() };
        let (m, report) = train_pcn(&parts, &cfg).unwrap();
        assert!(report.epochs.is_empty());
        let fresh = PcnModel::new(8, tiny(), 4).unwrap();
        assert_eq!(m.to_checkpoint(), fresh.to_checkpoint());
        assert!(!m.is_trained());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(train_pcn(&[], &PcnTrainConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let d = make_dataset(Category::Chair, 5, 2, 8).unwrap();
        let parts: Vec<PartRecord> = d.train_parts().cloned().collect();
        let cfg = PcnTrainConfig {
            epochs_joint: 2,
            epochs_stn: 1,
            lr_ae: 1e-3,
            lr_stn: 1e-3,
            batch_size: 4,
            arch: tiny(),
            seed: 4,
        };
        let (a, ra) = train_pcn(&parts, &cfg).unwrap();
        let (b, rb) = train_pcn(&parts, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.to_checkpoint(), b.to_checkpoint());
        assert_eq!(a.stage(), Stage::Stn);
        let back = PcnModel::from_checkpoint(&Checkpoint::from_bytes(&a.to_checkpoint().to_bytes()).unwrap()).unwrap();
        let z = a.encode(&parts[0].normalized).unwrap();
        assert_eq!(z, back.encode(&parts[0].normalized).unwrap());
        let mut csv = Vec::new();
        ra.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,loss_AE,loss_STN\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
