use super::{Layer, Param};

/// Adam optimizer. Moment buffers are matched to parameters by visit order,
/// so one instance must always be stepped with the same network.
pub struct Adam {
    pub lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: Vec::new() }
    }

    pub fn with_betas(mut self, beta1: f32, beta2: f32) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    /// Applies one update from the accumulated gradients (scaled by
    /// `grad_scale`) and zeroes them.
    pub fn step(&mut self, net: &mut dyn Layer, grad_scale: f32) {
        self.t += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let mut idx = 0;
        let moments = &mut self.moments;
        net.visit_params("", &mut |_, p: &mut Param| {
            if !p.trainable {
                return;
            }
            if moments.len() <= idx {
                moments.push((vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
            }
            let (m, v) = &mut moments[idx];
            for i in 0..p.value.len() {
                let g = p.grad[i] * grad_scale;
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.value[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            p.grad.fill(0.0);
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Linear, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fits_a_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new(2, 1, &mut rng);
        let mut opt = Adam::new(0.05);
        let x = Tensor::new(vec![4, 2], vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let target = [1.0, 3.0, -1.0, 1.0]; // 1 + 2a - 2b
        let mut last = f32::MAX;
        for _ in 0..500 {
            let y = lin.forward_train(&x);
            let g: Vec<f32> = y.data().iter().zip(&target).map(|(p, t)| 2.0 * (p - t) / 4.0).collect();
            last = y.data().iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f32>() / 4.0;
            lin.backward(&Tensor::new(vec![4, 1], g));
            opt.step(&mut lin, 1.0);
        }
        assert!(last < 1e-3, "loss {last}");
    }
}
