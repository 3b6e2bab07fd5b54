//! Conditional denoising diffusion over part codes.
//!
//! The noise predictor is a 1-D U-Net over the code treated as a length-`d`
//! signal with two channels, the noisy code and the assembly code. Four
//! blocks halve the length on the way down and four double it on the way up,
//! with skip connections between matching blocks. A sinusoidal embedding of
//! the step, passed through a small MLP, is projected and added inside every
//! block. The output head starts at zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentCode;
use crate::nn::{Act, Activation, Conv3d, ConvTranspose3d, Layer, Linear, Param, Seq, Tensor};

/// Variance schedule with cumulative products.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// `steps` betas spaced linearly from `beta_1` to `beta_T`.
    pub fn linear(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("diffusion needs at least one step".into()));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_1
                } else {
                    beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument("betas must lie in (0, 1)".into()));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// Default schedule: 1000 steps from 1e-4 to 0.02.
    pub fn standard() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid constants")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepRange { t, max: self.steps() });
        }
        Ok(())
    }
}

/// `sqrt(ᾱ_t) z0 + sqrt(1 - ᾱ_t) eps`.
pub fn ddpm_q_sample(schedule: &DiffusionSchedule, z0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    schedule.check(t)?;
    if z0.len() != eps.len() || eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument("noise must be finite and match the code length".into()));
    }
    let ab = schedule.alpha_bar(t);
    Ok(z0.iter().zip(eps).map(|(z, e)| ab.sqrt() * z + (1.0 - ab).sqrt() * e).collect())
}

/// One forward noising step `sqrt(1 - β_t) x + sqrt(β_t) eps`.
pub fn ddpm_q_step(schedule: &DiffusionSchedule, x: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    schedule.check(t)?;
    let b = schedule.beta(t);
    Ok(x.iter().zip(eps).map(|(v, e)| (1.0 - b).sqrt() * v + b.sqrt() * e).collect())
}

fn conv1(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Conv3d {
    Conv3d::new(cin, cout, [1, 1, k], [1, 1, stride], [0, 0, pad], rng)
}

fn len_of(x: &Tensor) -> usize {
    x.shape()[4]
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, cb, l) = (a.batch(), a.shape()[1], b.shape()[1], len_of(a));
    let mut out = Vec::with_capacity(n * (ca + cb) * l);
    for i in 0..n {
        out.extend_from_slice(a.item(i));
        out.extend_from_slice(b.item(i));
    }
    Tensor::new(vec![n, ca + cb, 1, 1, l], out)
}

fn split_channels(x: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let (n, c, l) = (x.batch(), x.shape()[1], len_of(x));
    let (mut a, mut b) = (Vec::with_capacity(n * ca * l), Vec::with_capacity(n * (c - ca) * l));
    for i in 0..n {
        let item = x.item(i);
        a.extend_from_slice(&item[..ca * l]);
        b.extend_from_slice(&item[ca * l..]);
    }
    (Tensor::new(vec![n, ca, 1, 1, l], a), Tensor::new(vec![n, c - ca, 1, 1, l], b))
}

/// Convolution, plus a per-channel shift from the step embedding, then SiLU.
struct TimeConv {
    conv: Conv3d,
    proj: Linear,
    act: Activation,
}

impl TimeConv {
    fn new(cin: usize, cout: usize, emb: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { conv: conv1(cin, cout, 3, 1, 1, rng), proj: Linear::new(emb, cout, rng), act: Activation::new(Act::Silu) }
    }

    fn shift(h: &mut Tensor, s: &Tensor) {
        let l = len_of(h);
        let c = h.shape()[1];
        for (k, row) in h.data_mut().chunks_mut(l).enumerate() {
            let v = s.data()[(k / c) * c + k % c];
            row.iter_mut().for_each(|x| *x += v);
        }
    }

    fn forward(&self, x: &Tensor, te: &Tensor) -> Tensor {
        let mut h = self.conv.forward(x);
        Self::shift(&mut h, &self.proj.forward(te));
        self.act.forward(&h)
    }

    fn forward_train(&mut self, x: &Tensor, te: &Tensor) -> Tensor {
        let mut h = self.conv.forward_train(x);
        Self::shift(&mut h, &self.proj.forward_train(te));
        self.act.forward_train(&h)
    }

    /// Returns gradients for the input and the step embedding.
    fn backward(&mut self, g: &Tensor) -> (Tensor, Tensor) {
        let gh = self.act.backward(g);
        let l = len_of(&gh);
        let (n, c) = (gh.batch(), gh.shape()[1]);
        let mut gs = vec![0.0; n * c];
        for (k, row) in gh.data().chunks(l).enumerate() {
            gs[k] += row.iter().sum::<f32>();
        }
        let gte = self.proj.backward(&Tensor::new(vec![n, c], gs));
        (self.conv.backward(&gh), gte)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_params(&format!("{prefix}conv."), f);
        self.proj.visit_params(&format!("{prefix}proj."), f);
    }

    fn visit_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit_params_ref(&format!("{prefix}conv."), f);
        self.proj.visit_params_ref(&format!("{prefix}proj."), f);
    }
}

/// Sinusoidal features of the step index.
pub fn step_embedding(t: f32, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * f).sin() as f32);
    }
    for k in 0..half {
        let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * f).cos() as f32);
    }
    out
}

struct Cache {
    te: Tensor,
}

/// Noise predictor. Input rows are `[z_t (d), y (d), t]`; output rows are
/// the predicted noise `(d)`.
pub struct UNet1d {
    d: usize,
    emb: usize,
    temb: Seq,
    inc: Conv3d,
    downs: Vec<(TimeConv, Conv3d)>,
    mid: TimeConv,
    ups: Vec<(ConvTranspose3d, TimeConv)>,
    out: Conv3d,
    cache: Option<Cache>,
}

impl UNet1d {
    /// `widths[0]` is the stem width; block `i` runs at `widths[i + 1]`.
    pub fn new(d: usize, widths: [usize; 5], emb: usize, seed: u64) -> Result<Self> {
        if d % 16 != 0 || d == 0 {
            return Err(Error::InvalidArgument(format!("code length {d} must be a positive multiple of 16")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let temb = Seq::new()
            .push(Linear::new(emb, emb, &mut rng))
            .push(Activation::new(Act::Silu))
            .push(Linear::new(emb, emb, &mut rng));
        let inc = conv1(2, widths[0], 3, 1, 1, &mut rng);
        let mut downs = Vec::new();
        for i in 0..4 {
            downs.push((
                TimeConv::new(widths[i], widths[i + 1], emb, &mut rng),
                conv1(widths[i + 1], widths[i + 1], 4, 2, 1, &mut rng),
            ));
        }
        let mid = TimeConv::new(widths[4], widths[4], emb, &mut rng);
        let mut ups = Vec::new();
        for i in (0..4).rev() {
            ups.push((
                ConvTranspose3d::new(widths[i + 1], widths[i + 1], [1, 1, 4], [1, 1, 2], [0, 0, 1], &mut rng),
                TimeConv::new(2 * widths[i + 1], widths[i], emb, &mut rng),
            ));
        }
        let mut out = conv1(widths[0], 1, 3, 1, 1, &mut rng);
        out.visit_params("", &mut |_, p| p.value.fill(0.0));
        Ok(Self { d, emb, temb, inc, downs, mid, ups, out, cache: None })
    }

    fn unpack(&self, x: &Tensor) -> (Tensor, Tensor) {
        let (b, d) = (x.batch(), self.d);
        assert_eq!(x.item_len(), 2 * d + 1, "noise predictor expects [z_t, y, t] rows");
        let mut sig = Vec::with_capacity(b * 2 * d);
        let mut emb = Vec::with_capacity(b * self.emb);
        for i in 0..b {
            let row = x.item(i);
            sig.extend_from_slice(&row[..2 * d]);
            emb.extend(step_embedding(row[2 * d], self.emb));
        }
        (Tensor::new(vec![b, 2, 1, 1, d], sig), Tensor::new(vec![b, self.emb], emb))
    }

    fn flatten_out(&self, y: Tensor) -> Tensor {
        let b = y.batch();
        y.reshape(vec![b, self.d])
    }
}

impl Layer for UNet1d {
    fn forward(&self, x: &Tensor) -> Tensor {
        let (sig, e) = self.unpack(x);
        let te = self.temb.forward(&e);
        let mut h = self.inc.forward(&sig);
        let mut skips = Vec::new();
        for (block, down) in &self.downs {
            let s = block.forward(&h, &te);
            h = down.forward(&s);
            skips.push(s);
        }
        h = self.mid.forward(&h, &te);
        for (up, block) in &self.ups {
            let u = up.forward(&h);
            h = block.forward(&concat_channels(&u, &skips.pop().unwrap()), &te);
        }
        self.flatten_out(self.out.forward(&h))
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (sig, e) = self.unpack(x);
        let te = self.temb.forward_train(&e);
        let mut h = self.inc.forward_train(&sig);
        let mut skips = Vec::new();
        for (block, down) in &mut self.downs {
            let s = block.forward_train(&h, &te);
            h = down.forward_train(&s);
            skips.push(s);
        }
        h = self.mid.forward_train(&h, &te);
        for (up, block) in &mut self.ups {
            let u = up.forward_train(&h);
            h = block.forward_train(&concat_channels(&u, &skips.pop().unwrap()), &te);
        }
        self.cache = Some(Cache { te });
        let y = self.out.forward_train(&h);
        self.flatten_out(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let Cache { te } = self.cache.take().expect("backward without forward_train");
        let (b, d) = (grad.batch(), self.d);
        let mut gte = Tensor::zeros(te.shape().to_vec());
        let mut g = self.out.backward(&grad.clone().reshape(vec![b, 1, 1, 1, d]));
        let mut skip_grads = Vec::new();
        for (up, block) in self.ups.iter_mut().rev() {
            let (gc, ge) = block.backward(&g);
            gte.add_assign(&ge);
            let cu = gc.shape()[1] / 2;
            let (gu, gs) = split_channels(&gc, cu);
            skip_grads.push(gs);
            g = up.backward(&gu);
        }
        let (gm, ge) = self.mid.backward(&g);
        gte.add_assign(&ge);
        g = gm;
        for (block, down) in self.downs.iter_mut().rev() {
            let mut gs = down.backward(&g);
            gs.add_assign(&skip_grads.pop().unwrap());
            let (gx, ge) = block.backward(&gs);
            gte.add_assign(&ge);
            g = gx;
        }
        self.temb.backward(&gte);
        let gsig = self.inc.backward(&g);
        let mut out = Vec::with_capacity(b * (2 * d + 1));
        for i in 0..b {
            out.extend_from_slice(gsig.item(i));
            out.push(0.0);
        }
        Tensor::new(vec![b, 2 * d + 1], out)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.temb.visit_params(&format!("{prefix}temb."), f);
        self.inc.visit_params(&format!("{prefix}inc."), f);
        for (i, (block, down)) in self.downs.iter_mut().enumerate() {
            block.visit(&format!("{prefix}down{i}.block."), f);
            down.visit_params(&format!("{prefix}down{i}.pool."), f);
        }
        self.mid.visit(&format!("{prefix}mid."), f);
        for (i, (up, block)) in self.ups.iter_mut().enumerate() {
            up.visit_params(&format!("{prefix}up{i}.unpool."), f);
            block.visit(&format!("{prefix}up{i}.block."), f);
        }
        self.out.visit_params(&format!("{prefix}out."), f);
    }

    fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.temb.visit_params_ref(&format!("{prefix}temb."), f);
        self.inc.visit_params_ref(&format!("{prefix}inc."), f);
        for (i, (block, down)) in self.downs.iter().enumerate() {
            block.visit_ref(&format!("{prefix}down{i}.block."), f);
            down.visit_params_ref(&format!("{prefix}down{i}.pool."), f);
        }
        self.mid.visit_ref(&format!("{prefix}mid."), f);
        for (i, (up, block)) in self.ups.iter().enumerate() {
            up.visit_params_ref(&format!("{prefix}up{i}.unpool."), f);
            block.visit_ref(&format!("{prefix}up{i}.block."), f);
        }
        self.out.visit_params_ref(&format!("{prefix}out."), f);
    }
}

pub struct Cddpm {
    pub(super) d: usize,
    pub(super) schedule: DiffusionSchedule,
    pub(super) net: UNet1d,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

impl Cddpm {
    pub fn new(d: usize, widths: [usize; 5], emb: usize, schedule: DiffusionSchedule, seed: u64) -> Result<Self> {
        Ok(Self { d, net: UNet1d::new(d, widths, emb, seed)?, schedule })
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn rows(&self, xs: &[Vec<f64>], ys: &[&[f32]], ts: &[usize]) -> Tensor {
        let d = self.d;
        let mut data = Vec::with_capacity(xs.len() * (2 * d + 1));
        for ((x, y), &t) in xs.iter().zip(ys).zip(ts) {
            data.extend(x.iter().map(|&v| v as f32));
            data.extend_from_slice(y);
            data.push(t as f32);
        }
        Tensor::new(vec![xs.len(), 2 * d + 1], data)
    }

    /// Draws steps and noise for a batch; returns the network input and the
    /// noise targets.
    fn noisy_batch(&self, ys: &[&[f32]], zs: &[&[f32]], rng: &mut ChaCha8Rng) -> (Tensor, Vec<f64>) {
        let t_max = self.schedule.steps();
        let mut xs = Vec::with_capacity(zs.len());
        let mut ts = Vec::with_capacity(zs.len());
        let mut targets = Vec::with_capacity(zs.len() * self.d);
        for z in zs {
            let t = rng.gen_range(1..=t_max);
            let eps = gaussian(rng, self.d);
            let z0: Vec<f64> = z.iter().map(|&v| v as f64).collect();
            xs.push(ddpm_q_sample(&self.schedule, &z0, t, &eps).expect("t in range"));
            ts.push(t);
            targets.extend(eps);
        }
        (self.rows(&xs, ys, &ts), targets)
    }

    /// Noise-prediction MSE for one `(y, z0)` pair with a seeded step and
    /// noise draw.
    pub fn loss(&self, y: &LatentCode, z0: &LatentCode, seed: u64) -> Result<f64> {
        y.check_dim(self.d)?;
        z0.check_dim(self.d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, eps) = self.noisy_batch(&[y.values()], &[z0.values()], &mut rng);
        let pred = self.net.forward(&x);
        Ok(pred.data().iter().zip(&eps).map(|(&p, &e)| (p as f64 - e).powi(2)).sum::<f64>() / self.d as f64)
    }

    pub(super) fn step(&mut self, ys: &[&[f32]], zs: &[&[f32]], rng: &mut ChaCha8Rng, opt: &mut crate::nn::Adam) -> f64 {
        let (x, eps) = self.noisy_batch(ys, zs, rng);
        let pred = self.net.forward_train(&x);
        let n = eps.len() as f64;
        let mut loss = 0.0;
        let grad: Vec<f32> = pred
            .data()
            .iter()
            .zip(&eps)
            .map(|(&p, &e)| {
                let r = p as f64 - e;
                loss += r * r / self.d as f64;
                (2.0 * r / n) as f32
            })
            .collect();
        self.net.backward(&Tensor::new(pred.shape().to_vec(), grad));
        opt.step(&mut self.net, 1.0);
        loss
    }

    /// Runs `k` ancestral reverse chains from pure noise, clamping the
    /// final codes to the unit box.
    pub fn sample(&self, y: &LatentCode, k: usize, seed: u64) -> Result<Vec<LatentCode>> {
        y.check_dim(self.d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs: Vec<Vec<f64>> = (0..k).map(|_| gaussian(&mut rng, self.d)).collect();
        let ys: Vec<&[f32]> = vec![y.values(); k];
        for t in (1..=self.schedule.steps()).rev() {
            let eps = self.net.forward(&self.rows(&xs, &ys, &vec![t; k]));
            let (b, ab) = (self.schedule.beta(t), self.schedule.alpha_bar(t));
            let coef = b / (1.0 - ab).sqrt();
            for (i, x) in xs.iter_mut().enumerate() {
                let e = eps.item(i);
                for a in 0..self.d {
                    x[a] = (x[a] - coef * e[a] as f64) / (1.0 - b).sqrt();
                }
                if t > 1 {
                    for v in x.iter_mut() {
                        let n: f64 = rng.sample(StandardNormal);
                        *v += b.sqrt() * n;
                    }
                }
            }
        }
        Ok(xs.into_iter().map(|x| LatentCode::new(x.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;

    #[test]
    fn standard_schedule_destroys_signal() {
        let s = DiffusionSchedule::standard();
        assert_eq!(s.steps(), 1000);
        assert!(s.alpha_bar(1000) < 1e-4);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        let mut prod = 1.0;
        for t in 1..=1000 {
            prod *= 1.0 - s.beta(t);
            assert!((prod - s.alpha_bar(t)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_noise_scales_the_code() {
        let s = DiffusionSchedule::standard();
        let z0 = [0.2, 0.9, 0.4];
        let x = ddpm_q_sample(&s, &z0, 300, &[0.0; 3]).unwrap();
        for (a, b) in x.iter().zip(z0) {
            assert_eq!(*a, s.alpha_bar(300).sqrt() * b);
        }
    }

    #[test]
    fn step_range_enforced() {
        let s = DiffusionSchedule::standard();
        assert!(matches!(ddpm_q_sample(&s, &[0.0], 0, &[0.0]), Err(Error::StepRange { .. })));
        assert!(matches!(ddpm_q_sample(&s, &[0.0], 1001, &[0.0]), Err(Error::StepRange { .. })));
        assert!(DiffusionSchedule::from_betas(vec![0.5, 1.0]).is_err());
    }

    /// Fixes the step input so only the signal columns are perturbed.
    struct AtStep(UNet1d, f32);

    impl Layer for AtStep {
        fn forward(&self, x: &Tensor) -> Tensor {
            self.0.forward(&self.with_step(x))
        }
        fn forward_train(&mut self, x: &Tensor) -> Tensor {
            let x = self.with_step(x);
            self.0.forward_train(&x)
        }
        fn backward(&mut self, g: &Tensor) -> Tensor {
            let gx = self.0.backward(g);
            let w = gx.item_len() - 1;
            Tensor::new(vec![gx.batch(), w], gx.data().chunks(w + 1).flat_map(|r| r[..w].iter().copied()).collect())
        }
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
            self.0.visit_params(prefix, f)
        }
        fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
            self.0.visit_params_ref(prefix, f)
        }
    }

    impl AtStep {
        fn with_step(&self, x: &Tensor) -> Tensor {
            let w = x.item_len();
            let data = x.data().chunks(w).flat_map(|r| r.iter().copied().chain([self.1])).collect();
            Tensor::new(vec![x.batch(), w + 1], data)
        }
    }

    #[test]
    fn noise_predictor_gradients() {
        let mut net = UNet1d::new(16, [2, 2, 3, 3, 4], 4, 3).unwrap();
        // give the zero head some weight so gradients reach every block
        net.out.visit_params("", &mut |_, p| {
            for (i, v) in p.value.iter_mut().enumerate() {
                *v = 0.3 * ((i % 3) as f32 - 1.0) + 0.1;
            }
        });
        let row: Vec<f32> = (0..64).map(|i| ((i * 7 % 11) as f32) / 11.0 - 0.5).collect();
        let x = Tensor::new(vec![2, 32], row);
        gradcheck::check(&mut AtStep(net, 17.0), &x, 5e-2);
    }

    #[test]
    fn zero_head_predicts_zero_noise() {
        let m = Cddpm::new(16, [4, 4, 8, 8, 8], 8, DiffusionSchedule::standard(), 1).unwrap();
        let y = LatentCode::new(vec![0.5; 16]);
        let z = LatentCode::new(vec![0.3; 16]);
        let mean: f64 = (0..1000).map(|s| m.loss(&y, &z, s).unwrap()).sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
        assert_eq!(m.loss(&y, &z, 4).unwrap(), m.loss(&y, &z, 4).unwrap());
    }

    #[test]
    fn sampling_is_clamped_and_seeded() {
        let s = DiffusionSchedule::linear(20, 1e-3, 0.2).unwrap();
        let m = Cddpm::new(16, [2, 2, 2, 2, 2], 4, s, 1).unwrap();
        let y = LatentCode::new(vec![0.5; 16]);
        let a = m.sample(&y, 3, 9).unwrap();
        assert_eq!(a, m.sample(&y, 3, 9).unwrap());
        assert!(a.iter().all(|c| c.in_unit_box() && c.dim() == 16));
    }
}
