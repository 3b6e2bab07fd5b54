//! Conditional IMLE: for each condition, `h` noise draws give `h` candidate
//! codes and only the candidate nearest the ground truth is pulled towards it.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cgan::{concat_rows, noise};
use super::mlp;
use crate::latent::LatentCode;
use crate::nn::{Act, Activation, Adam, Layer, Seq, Tensor};

pub struct Cimle {
    pub(super) d: usize,
    pub(super) m: usize,
    pub(super) h: usize,
    pub(super) generator: Seq,
}

/// The candidates drawn for one condition and the one the loss used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImleSelection {
    pub target: Vec<f32>,
    pub candidates: Vec<Vec<f32>>,
    pub selected: usize,
    /// Generator output the gradient was computed from.
    pub trained_on: Vec<f32>,
}

/// Index of the candidate with the smallest Euclidean distance to `target`;
/// ties go to the lowest index.
pub fn nearest_candidate(target: &[f32], candidates: &[Vec<f32>]) -> usize {
    let dist = |c: &Vec<f32>| c.iter().zip(target).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in candidates.iter().enumerate() {
        let dj = dist(c);
        if dj < best_d {
            best = j;
            best_d = dj;
        }
    }
    best
}

impl Cimle {
    pub fn new(d: usize, m: usize, h: usize, hidden: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = mlp(&[d + m, hidden, hidden, hidden, hidden, d], Act::LeakyRelu, &mut rng)
            .push(Activation::new(Act::Sigmoid));
        Self { d, m, h, generator }
    }

    pub fn generate(&self, y: &LatentCode, noise: &[f32]) -> LatentCode {
        let x = concat_rows(y.values(), self.d, noise, self.m);
        LatentCode::new(self.generator.forward(&Tensor::new(vec![1, self.d + self.m], x)).into_data())
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn candidates(&self) -> usize {
        self.h
    }

    /// One update on a batch; returns the summed selected-candidate MSE and,
    /// when `log` is set, the per-condition selections.
    pub(super) fn step(
        &mut self,
        ys: &[f32],
        zs: &[f32],
        rng: &mut ChaCha8Rng,
        opt: &mut Adam,
        log: bool,
    ) -> (f64, Vec<ImleSelection>) {
        let (d, m, h) = (self.d, self.m, self.h);
        let b = ys.len() / d;
        let n = noise(rng, b * h * m);
        let rep: Vec<f32> = (0..b).flat_map(|i| (0..h).flat_map(move |_| ys[i * d..(i + 1) * d].iter().copied())).collect();
        let cands = self.generator.forward(&Tensor::new(vec![b * h, d + m], concat_rows(&rep, d, &n, m)));
        let mut chosen_noise = Vec::with_capacity(b * m);
        let mut selections = Vec::new();
        let mut picks = Vec::with_capacity(b);
        for i in 0..b {
            let target = &zs[i * d..(i + 1) * d];
            let set: Vec<Vec<f32>> = (0..h).map(|j| cands.item(i * h + j).to_vec()).collect();
            let k = nearest_candidate(target, &set);
            chosen_noise.extend_from_slice(&n[(i * h + k) * m..(i * h + k + 1) * m]);
            picks.push(k);
            if log {
                selections.push(ImleSelection { target: target.to_vec(), candidates: set, selected: k, trained_on: Vec::new() });
            }
        }
        let out = self.generator.forward_train(&Tensor::new(vec![b, d + m], concat_rows(ys, d, &chosen_noise, m)));
        let mut loss = 0.0;
        let grad: Vec<f32> = out
            .data()
            .iter()
            .zip(zs)
            .map(|(&p, &t)| {
                loss += ((p - t) as f64).powi(2) / d as f64;
                2.0 * (p - t) / (d * b) as f32
            })
            .collect();
        for (i, s) in selections.iter_mut().enumerate() {
            s.trained_on = out.item(i).to_vec();
        }
        self.generator.backward(&Tensor::new(vec![b, d], grad));
        opt.step(&mut self.generator, 1.0);
        (loss, selections)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn argmin_of_known_distances() {
        let target = [0.0f32];
        let cands: Vec<Vec<f32>> = [3.0f32, 1.0, 2.0, 5.0].iter().map(|&v| vec![v]).collect();
        assert_eq!(nearest_candidate(&target, &cands), 1);
    }

    #[test]
    fn exact_candidate_is_chosen() {
        let target = vec![0.3f32, 0.7];
        let cands = vec![vec![0.9, 0.1], target.clone(), vec![0.31, 0.7]];
        assert_eq!(nearest_candidate(&target, &cands), 1);
    }

    #[test]
    fn logged_selection_is_the_nearest_and_is_trained_on() {
        let mut g = Cimle::new(5, 3, 4, 16, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut opt = Adam::new(1e-3);
        let ys: Vec<f32> = (0..15).map(|i| (i as f32 * 0.07) % 1.0).collect();
        let zs: Vec<f32> = (0..15).map(|i| (i as f32 * 0.13) % 1.0).collect();
        let (_, log) = g.step(&ys, &zs, &mut rng, &mut opt, true);
        assert_eq!(log.len(), 3);
        for s in &log {
            assert_eq!(s.candidates.len(), 4);
            assert_eq!(nearest_candidate(&s.target, &s.candidates), s.selected);
            assert_eq!(s.trained_on, s.candidates[s.selected]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let g = Cimle::new(4, 2, 4, 8, 0);
        let y = LatentCode::new(vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(g.generate(&y, &[0.5, -1.0]), g.generate(&y, &[0.5, -1.0]));
        assert_eq!(g.generate(&y, &[0.5, -1.0]).dim(), 4);
    }
}
