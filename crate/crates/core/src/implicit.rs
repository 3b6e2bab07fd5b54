//! Implicit occupancy decoder: a coordinate network mapping a latent code and
//! a point of the normalized part frame to an occupancy in `[0, 1]`.
//!
//! Six fully connected layers with leaky ReLUs. The first layer acts on the
//! concatenation `(z, p)`; it is stored as a `z` block and a `p` block so the
//! code term is computed once per part rather than once per point.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, VoxelGrid};
use crate::latent::LatentCode;
use crate::nn::sigmoid;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Act, Activation, Adam, Layer, Linear, Seq, Tensor};

pub const CHECKPOINT_KIND: &str = "implicit";

const QUERY_CHUNK: usize = 8192;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImplicitConfig {
    pub width: usize,
    pub epochs: usize,
    pub lr: f32,
    pub codes_per_batch: usize,
    /// Voxel centers drawn per part and epoch.
    pub points_per_code: usize,
    /// Uniform codes from `[0,1]^d` added to the training set with the PCN
    /// decoder's output as target, so codes away from the encoder's image
    /// still decode to parts.
    pub prior_codes: usize,
    pub seed: u64,
}

impl Default for ImplicitConfig {
    fn default() -> Self {
        Self { width: 128, epochs: 20, lr: 1e-3, codes_per_batch: 8, points_per_code: 2048, prior_codes: 256, seed: 0 }
    }
}

impl ImplicitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.codes_per_batch == 0 || self.points_per_code == 0 {
            return Err(Error::InvalidArgument("width and batch sizes must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

pub struct ImplicitModel {
    latent_dim: usize,
    width: usize,
    first_z: Linear,
    first_p: Linear,
    rest: Seq,
    trained: bool,
}

impl ImplicitModel {
    pub fn new(latent_dim: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut first_z = Linear::new(latent_dim, width, &mut rng);
        let mut first_p = Linear::new(3, width, &mut rng);
        // both blocks share the fan-in of the concatenated input
        let bound = (6.0 / (latent_dim + 3) as f32).sqrt();
        for l in [&mut first_z, &mut first_p] {
            l.weight.value.iter_mut().for_each(|w| *w = rng.gen_range(-bound..=bound));
        }
        let mut rest = Seq::new();
        for _ in 0..4 {
            rest = rest.push(Activation::new(Act::LeakyRelu)).push(Linear::new(width, width, &mut rng));
        }
        rest = rest.push(Activation::new(Act::LeakyRelu)).push(Linear::new(width, 1, &mut rng));
        Self { latent_dim, width, first_z, first_p, rest, trained: false }
    }

    /// A model whose every weight and bias is zero.
    pub fn zeroed(latent_dim: usize, width: usize) -> Self {
        let mut m = Self::new(latent_dim, width, 0);
        let mut zero = |_: &str, p: &mut crate::nn::Param| p.value.fill(0.0);
        m.first_z.visit_params("", &mut zero);
        m.first_p.visit_params("", &mut zero);
        m.rest.visit_params("", &mut zero);
        m
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn hidden(&self, z: &[f32], points: &[[f32; 3]]) -> Tensor {
        let hz = self.first_z.forward(&Tensor::new(vec![1, self.latent_dim], z.to_vec()));
        let flat: Vec<f32> = points.iter().flatten().copied().collect();
        let mut h = self.first_p.forward(&Tensor::new(vec![points.len(), 3], flat));
        for row in h.data_mut().chunks_mut(self.width) {
            row.iter_mut().zip(hz.data()).for_each(|(a, b)| *a += b);
        }
        h
    }

    fn logits(&self, z: &[f32], points: &[[f32; 3]]) -> Vec<f32> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(QUERY_CHUNK) {
            out.extend_from_slice(self.rest.forward(&self.hidden(z, chunk)).data());
        }
        out
    }

    /// Occupancy at each point.
    pub fn occupancy(&self, z: &LatentCode, points: &PointCloud) -> Result<Vec<f32>> {
        z.check_dim(self.latent_dim)?;
        let pts: Vec<[f32; 3]> = points.points.iter().map(|p| p.map(|c| c as f32)).collect();
        Ok(self.logits(z.values(), &pts).into_iter().map(sigmoid).collect())
    }

    /// Samples the field at the voxel centers of a `resolution^3` grid.
    pub fn decode_field(&self, z: &LatentCode, resolution: usize) -> Result<VoxelGrid> {
        z.check_dim(self.latent_dim)?;
        if resolution < 8 {
            return Err(Error::InvalidArgument(format!("field resolution {resolution} is below 8")));
        }
        let grid = VoxelGrid::zeros(resolution);
        let pts: Vec<[f32; 3]> = (0..resolution.pow(3))
            .map(|i| {
                let r = resolution;
                grid.center([i / (r * r), (i / r) % r, i % r]).map(|c| c as f32)
            })
            .collect();
        let values = self.logits(z.values(), &pts).into_iter().map(sigmoid).collect();
        VoxelGrid::from_values(resolution, values)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = Map::new();
        meta.insert("d".into(), json!(self.latent_dim));
        meta.insert("width".into(), json!(self.width));
        meta.insert("trained".into(), json!(self.trained));
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        ck.add_module("first_z.", &self.first_z);
        ck.add_module("first_p.", &self.first_p);
        ck.add_module("rest.", &self.rest);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(&[CHECKPOINT_KIND])?;
        let mut m = Self::new(ck.meta_usize("d")?, ck.meta_usize("width")?, 0);
        ck.load_module("first_z.", &mut m.first_z)?;
        ck.load_module("first_p.", &mut m.first_p)?;
        ck.load_module("rest.", &mut m.rest)?;
        m.trained = ck.meta.get("trained").and_then(serde_json::Value::as_bool).unwrap_or(false);
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Mean binary cross-entropy per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImplicitReport {
    pub losses: Vec<f64>,
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Fits the decoder to `(part, code)` pairs by binary cross-entropy at
/// randomly drawn voxel centers. Codes stay fixed.
pub fn train_implicit(
    parts: &[(VoxelGrid, LatentCode)],
    config: &ImplicitConfig,
) -> Result<(ImplicitModel, ImplicitReport)> {
    config.validate()?;
    let d = parts.first().ok_or(Error::EmptyDataset)?.1.dim();
    for (_, z) in parts {
        z.check_dim(d)?;
    }
    let mut model = ImplicitModel::new(d, config.width, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1A9);
    let (mut opt_z, mut opt_p, mut opt_rest) = (Adam::new(config.lr), Adam::new(config.lr), Adam::new(config.lr));
    let mut report = ImplicitReport::default();
    let mut order: Vec<usize> = (0..parts.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(config.codes_per_batch) {
            let mut codes = Vec::with_capacity(batch.len() * d);
            let mut pts = Vec::new();
            let mut targets = Vec::new();
            let mut counts = Vec::with_capacity(batch.len());
            for &i in batch {
                let (grid, z) = &parts[i];
                codes.extend_from_slice(z.values());
                let n = grid.values().len();
                let k = config.points_per_code.min(n);
                for idx in rand::seq::index::sample(&mut rng, n, k).into_iter() {
                    let r = grid.resolution();
                    pts.extend(grid.center([idx / (r * r), (idx / r) % r, idx % r]).map(|c| c as f32));
                    targets.push(grid.values()[idx]);
                }
                counts.push(k);
            }
            let hz = model.first_z.forward_train(&Tensor::new(vec![batch.len(), d], codes));
            let mut h = model.first_p.forward_train(&Tensor::new(vec![targets.len(), 3], pts));
            let w = config.width;
            let mut row = 0;
            for (c, &k) in counts.iter().enumerate() {
                let add = hz.item(c);
                for r in row..row + k {
                    h.data_mut()[r * w..(r + 1) * w].iter_mut().zip(add).for_each(|(a, b)| *a += b);
                }
                row += k;
            }
            let logits = model.rest.forward_train(&h);
            let n = targets.len() as f32;
            let mut grad = Vec::with_capacity(targets.len());
            for (&x, &y) in logits.data().iter().zip(&targets) {
                total += softplus(x as f64) - y as f64 * x as f64;
                grad.push((sigmoid(x) - y) / n);
            }
            count += targets.len();
            let gh = model.rest.backward(&Tensor::new(vec![targets.len(), 1], grad));
            model.first_p.backward(&gh);
            let mut gz = vec![0.0f32; batch.len() * w];
            let mut row = 0;
            for (c, &k) in counts.iter().enumerate() {
                let acc = &mut gz[c * w..(c + 1) * w];
                for r in row..row + k {
                    acc.iter_mut().zip(&gh.data()[r * w..(r + 1) * w]).for_each(|(a, b)| *a += b);
                }
                row += k;
            }
            model.first_z.backward(&Tensor::new(vec![batch.len(), w], gz));
            opt_z.step(&mut model.first_z, 1.0);
            opt_p.step(&mut model.first_p, 1.0);
            opt_rest.step(&mut model.rest, 1.0);
        }
        let loss = total / count as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::info!("implicit epoch {epoch}: bce {loss:.6}");
        report.losses.push(loss);
    }
    model.trained = true;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slab(r: usize) -> VoxelGrid {
        let mut g = VoxelGrid::zeros(r);
        g.fill_box([-0.4, -0.1, -0.4], [0.4, 0.1, 0.4]);
        g
    }

    fn post(r: usize) -> VoxelGrid {
        let mut g = VoxelGrid::zeros(r);
        g.fill_box([-0.1, -0.4, -0.1], [0.1, 0.4, 0.1]);
        g
    }

    fn code(v: f32) -> LatentCode {
        LatentCode::new(vec![v; 8])
    }

    #[test]
    fn zero_model_is_constant_half() {
        let m = ImplicitModel::zeroed(8, 16);
        let g = m.decode_field(&code(0.3), 8).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn dimension_and_resolution_checked() {
        let m = ImplicitModel::new(8, 16, 0);
        assert!(matches!(m.decode_field(&LatentCode::new(vec![0.0; 3]), 16), Err(Error::Shape(_))));
        assert!(matches!(m.decode_field(&code(0.1), 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn query_is_deterministic() {
        let m = ImplicitModel::new(8, 16, 1);
        let pts = PointCloud::new(vec![[0.1, 0.2, 0.3], [-0.4, 0.0, 0.25]]).unwrap();
        assert_eq!(m.occupancy(&code(0.2), &pts).unwrap(), m.occupancy(&code(0.2), &pts).unwrap());
    }

    fn fit() -> (ImplicitModel, ImplicitReport) {
        let parts = vec![(slab(16), code(0.1)), (post(16), code(0.9))];
        let cfg = ImplicitConfig { width: 32, epochs: 400, lr: 3e-3, codes_per_batch: 2, points_per_code: 1024, prior_codes: 0, seed: 2 };
        train_implicit(&parts, &cfg).unwrap()
    }

    #[test]
    fn training_fits_two_parts() {
        let (m, report) = fit();
        assert!(report.losses.last().unwrap() < &(0.7 * report.losses[0]));
        let q = PointCloud::new(vec![[0.0, 0.0, 0.0], [0.45, 0.45, 0.45]]).unwrap();
        let occ = m.occupancy(&code(0.1), &q).unwrap();
        assert!(occ[0] > 0.5 && occ[1] < 0.5, "{occ:?}");
        let field = m.decode_field(&code(0.9), 16).unwrap();
        let iou = field.iou(&post(16), 0.5).unwrap();
        assert!(iou > 0.8, "iou {iou} losses {:?}", &report.losses[report.losses.len() - 3..]);
        // the field is resolution free: a 32^3 sample averaged down matches 16^3
        let fine = m.decode_field(&code(0.9), 32).unwrap().downsample(2).unwrap();
        let mad: f32 =
            fine.values().iter().zip(field.values()).map(|(a, b)| (a - b).abs()).sum::<f32>() / field.values().len() as f32;
        assert!(mad < 0.1, "{mad}");
    }

    #[test]
    fn training_is_reproducible_and_round_trips() {
        let parts = vec![(slab(8), code(0.1))];
        let cfg = ImplicitConfig { width: 16, epochs: 3, ..Default::default() };
        let (a, ra) = train_implicit(&parts, &cfg).unwrap();
        let (_, rb) = train_implicit(&parts, &cfg).unwrap();
        assert_eq!(ra, rb);
        let back = ImplicitModel::from_checkpoint(&Checkpoint::from_bytes(&a.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.decode_field(&code(0.1), 8).unwrap(), a.decode_field(&code(0.1), 8).unwrap());
        let (_, r0) = train_implicit(&parts, &ImplicitConfig { epochs: 0, ..cfg }).unwrap();
        assert!(r0.losses.is_empty());
        assert!(matches!(train_implicit(&[], &ImplicitConfig::default()), Err(Error::EmptyDataset)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn output_bounded_and_continuous(
            z in proptest::collection::vec(0.0f32..=1.0, 8),
            p in proptest::array::uniform3(-0.5f64..0.5),
            seed in 0u64..4,
        ) {
            let m = ImplicitModel::new(8, 16, seed);
            let z = LatentCode::new(z);
            let q = PointCloud::new(vec![p, [p[0] + 1e-4, p[1], p[2]]]).unwrap();
            let v = m.occupancy(&z, &q).unwrap();
            prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!((v[0] - v[1]).abs() < 1e-2);
        }
    }
}
