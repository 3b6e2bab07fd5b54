//! Mixture density network: an MLP mapping an assembly code to a diagonal
//! Gaussian mixture over part codes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::mlp;
use crate::error::{Error, Result};
use crate::latent::LatentCode;
use crate::nn::{Act, Layer, Seq, Tensor};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
const LOG_STD_RANGE: (f32, f32) = (-9.0, 3.0);

/// Weights, means and standard deviations of an `h`-component mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl MixtureModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.weights.len();
        if h == 0 || self.means.len() != h || self.stds.len() != h {
            return Err(Error::InvalidArgument("mixture needs matching non-empty blocks".into()));
        }
        let d = self.dim();
        if self.means.iter().chain(&self.stds).any(|v| v.len() != d) {
            return Err(Error::InvalidArgument("ragged mixture".into()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("mixture weights are not on the simplex".into()));
        }
        if self.stds.iter().flatten().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("mixture standard deviations must be positive".into()));
        }
        Ok(())
    }

    /// Log density of each component at `z` (without the weight).
    fn component_log_densities(&self, z: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.stds)
            .map(|(mu, sd)| {
                z.iter()
                    .zip(mu)
                    .zip(sd)
                    .map(|((&x, &m), &s)| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * LOG_2PI)
                    .sum()
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Negative log-likelihood of `z` under `mix`.
pub fn mdn_loss(mix: &MixtureModel, z: &LatentCode) -> Result<f64> {
    mix.validate()?;
    z.check_dim(mix.dim())?;
    let z: Vec<f64> = z.values().iter().map(|&v| v as f64).collect();
    let terms: Vec<f64> = mix
        .component_log_densities(&z)
        .iter()
        .zip(&mix.weights)
        .map(|(lp, &w)| w.ln() + lp)
        .collect();
    Ok(-log_sum_exp(&terms))
}

/// Draws `k` codes: a component by weight, then a diagonal Gaussian draw,
/// clamped to the unit box.
pub fn mdn_sample(mix: &MixtureModel, k: usize, seed: u64) -> Result<Vec<LatentCode>> {
    mix.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(&mix.weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..k)
        .map(|_| {
            let j = pick.sample(&mut rng);
            let v = mix.means[j]
                .iter()
                .zip(&mix.stds[j])
                .map(|(&m, &s)| {
                    let e: f64 = rng.sample(StandardNormal);
                    (m + s * e).clamp(0.0, 1.0) as f32
                })
                .collect();
            LatentCode::new(v)
        })
        .collect())
}

/// Index of the component each draw of [`mdn_sample`] used, for frequency
/// checks.
pub fn mdn_sample_components(mix: &MixtureModel, k: usize, seed: u64) -> Result<Vec<usize>> {
    mix.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(&mix.weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..k)
        .map(|_| {
            let j = pick.sample(&mut rng);
            for _ in 0..mix.dim() {
                let _: f64 = rng.sample(StandardNormal);
            }
            j
        })
        .collect())
}

pub struct Mdn {
    pub(super) d: usize,
    pub(super) h: usize,
    pub(super) net: Seq,
}

impl Mdn {
    pub fn new(d: usize, h: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { d, h, net: mlp(&[d, hidden, hidden, h + 2 * h * d], Act::Relu, &mut rng) }
    }

    fn split(&self, raw: &[f32]) -> MixtureModel {
        let (h, d) = (self.h, self.d);
        let logits: Vec<f64> = raw[..h].iter().map(|&v| v as f64).collect();
        let lse = log_sum_exp(&logits);
        let weights = logits.iter().map(|l| (l - lse).exp()).collect();
        let means = (0..h).map(|j| raw[h + j * d..h + (j + 1) * d].iter().map(|&v| v as f64).collect()).collect();
        let off = h + h * d;
        let stds = (0..h)
            .map(|j| {
                raw[off + j * d..off + (j + 1) * d]
                    .iter()
                    .map(|&v| (v.clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1) as f64).exp())
                    .collect()
            })
            .collect();
        MixtureModel { weights, means, stds }
    }

    pub fn predict(&self, y: &LatentCode) -> Result<MixtureModel> {
        y.check_dim(self.d)?;
        let raw = self.net.forward(&Tensor::new(vec![1, self.d], y.values().to_vec()));
        Ok(self.split(raw.data()))
    }

    /// One optimization pass over a batch; returns the summed NLL.
    pub(super) fn accumulate(&mut self, ys: &[&LatentCode], zs: &[&LatentCode]) -> f64 {
        let (h, d, b) = (self.h, self.d, ys.len());
        let x: Vec<f32> = ys.iter().flat_map(|y| y.values().iter().copied()).collect();
        let raw = self.net.forward_train(&Tensor::new(vec![b, d], x));
        let width = h + 2 * h * d;
        let mut grad = vec![0.0f32; b * width];
        let mut total = 0.0;
        for i in 0..b {
            let r = raw.item(i);
            let mix = self.split(r);
            let z: Vec<f64> = zs[i].values().iter().map(|&v| v as f64).collect();
            let lp = mix.component_log_densities(&z);
            let terms: Vec<f64> = lp.iter().zip(&mix.weights).map(|(l, w)| w.ln() + l).collect();
            let lse = log_sum_exp(&terms);
            total -= lse;
            let g = &mut grad[i * width..(i + 1) * width];
            let scale = 1.0 / b as f64;
            for j in 0..h {
                let gamma = (terms[j] - lse).exp();
                g[j] = ((mix.weights[j] - gamma) * scale) as f32;
                for a in 0..d {
                    let (m, s) = (mix.means[j][a], mix.stds[j][a]);
                    let u = (z[a] - m) / s;
                    g[h + j * d + a] = (-gamma * u / s * scale) as f32;
                    let raw_ls = r[h + h * d + j * d + a];
                    if (LOG_STD_RANGE.0..=LOG_STD_RANGE.1).contains(&raw_ls) {
                        g[h + h * d + j * d + a] = (-gamma * (u * u - 1.0) * scale) as f32;
                    }
                }
            }
        }
        self.net.backward(&Tensor::new(vec![b, width], grad));
        total
    }
}
