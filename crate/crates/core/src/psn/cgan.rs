//! Conditional GAN over part codes.
//!
//! The discriminator minimizes `-[log D(y, z) + log(1 - D(y, G(y, n)))]`; the
//! generator is updated with the non-saturating loss `-log D(y, G(y, n))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mlp;
use crate::latent::LatentCode;
use crate::nn::{sigmoid, Act, Activation, Adam, Layer, Seq, Tensor};

/// `log(1 + e^x)` without overflow.
pub(super) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Discriminator loss from logits: `-log D(real) - log(1 - D(fake))`
/// averaged over the batch.
pub fn discriminator_loss(real_logits: &[f32], fake_logits: &[f32]) -> f64 {
    let real: f64 = real_logits.iter().map(|&l| softplus(-l as f64)).sum::<f64>() / real_logits.len() as f64;
    let fake: f64 = fake_logits.iter().map(|&l| softplus(l as f64)).sum::<f64>() / fake_logits.len() as f64;
    real + fake
}

pub struct Cgan {
    pub(super) d: usize,
    pub(super) m: usize,
    pub(super) generator: Seq,
    pub(super) discriminator: Seq,
}

pub(super) fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

pub(super) fn concat_rows(a: &[f32], wa: usize, b: &[f32], wb: usize) -> Vec<f32> {
    let rows = a.len() / wa;
    let mut out = Vec::with_capacity(rows * (wa + wb));
    for r in 0..rows {
        out.extend_from_slice(&a[r * wa..(r + 1) * wa]);
        out.extend_from_slice(&b[r * wb..(r + 1) * wb]);
    }
    out
}

/// Losses of one alternating update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanStep {
    pub loss_d: f64,
    pub loss_g: f64,
    /// `log D(real) + log(1 - D(fake))` before the update.
    pub value: f64,
}

impl Cgan {
    pub fn new(d: usize, m: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = mlp(&[d + m, hidden, hidden, d], Act::LeakyRelu, &mut rng).push(Activation::new(Act::Sigmoid));
        let discriminator = mlp(&[2 * d, hidden, hidden, 1], Act::LeakyRelu, &mut rng);
        Self { d, m, generator, discriminator }
    }

    pub fn generate(&self, y: &LatentCode, noise: &[f32]) -> LatentCode {
        let x = concat_rows(y.values(), self.d, noise, self.m);
        LatentCode::new(self.generator.forward(&Tensor::new(vec![1, self.d + self.m], x)).into_data())
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    /// One discriminator update followed by one generator update.
    pub(super) fn step(
        &mut self,
        ys: &[f32],
        zs: &[f32],
        rng: &mut ChaCha8Rng,
        opt_g: &mut Adam,
        opt_d: &mut Adam,
    ) -> GanStep {
        let (d, m) = (self.d, self.m);
        let b = ys.len() / d;
        let n = noise(rng, b * m);
        let fake = self.generator.forward(&Tensor::new(vec![b, d + m], concat_rows(ys, d, &n, m)));

        // discriminator: real and fake halves in one batch
        let mut x = concat_rows(ys, d, zs, d);
        x.extend(concat_rows(ys, d, fake.data(), d));
        let logits = self.discriminator.forward_train(&Tensor::new(vec![2 * b, 2 * d], x));
        let (real_l, fake_l) = logits.data().split_at(b);
        let loss_d = discriminator_loss(real_l, fake_l);
        let grad: Vec<f32> = real_l
            .iter()
            .map(|&l| (sigmoid(l) - 1.0) / b as f32)
            .chain(fake_l.iter().map(|&l| sigmoid(l) / b as f32))
            .collect();
        self.discriminator.backward(&Tensor::new(vec![2 * b, 1], grad));
        opt_d.step(&mut self.discriminator, 1.0);

        // generator: non-saturating loss through the updated discriminator
        let n = noise(rng, b * m);
        let fake = self.generator.forward_train(&Tensor::new(vec![b, d + m], concat_rows(ys, d, &n, m)));
        let logits = self.discriminator.forward_train(&Tensor::new(vec![b, 2 * d], concat_rows(ys, d, fake.data(), d)));
        let loss_g = logits.data().iter().map(|&l| softplus(-l as f64)).sum::<f64>() / b as f64;
        let grad: Vec<f32> = logits.data().iter().map(|&l| (sigmoid(l) - 1.0) / b as f32).collect();
        let dx = self.discriminator.backward(&Tensor::new(vec![b, 1], grad));
        // gradients on D from this pass are discarded
        crate::nn::zero_grad(&mut self.discriminator);
        let dz: Vec<f32> = dx.data().chunks(2 * d).flat_map(|row| row[d..].iter().copied()).collect();
        self.generator.backward(&Tensor::new(vec![b, d], dz));
        opt_g.step(&mut self.generator, 1.0);
        GanStep { loss_d, loss_g, value: -loss_d }
    }
}
