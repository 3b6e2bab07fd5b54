use super::{Layer, Param, Tensor};

const EPS: f32 = 1e-5;
const MOMENTUM: f32 = 0.1;

/// Batch normalization over every non-channel axis of `[B, C, ...]`.
///
/// Training normalizes with batch statistics and updates running estimates;
/// inference uses the running estimates.
pub struct BatchNorm {
    channels: usize,
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    cache: Option<(Vec<f32>, Vec<f32>, Vec<usize>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![channels], vec![1.0; channels]),
            beta: Param::zeros(vec![channels]),
            running_mean: Param::buffer(vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(vec![channels], vec![1.0; channels]),
            cache: None,
        }
    }

    fn spatial(&self, x: &Tensor) -> usize {
        assert_eq!(x.shape()[1], self.channels, "batch norm expects {} channels", self.channels);
        x.shape()[2..].iter().product()
    }
}

impl Layer for BatchNorm {
    fn forward(&self, x: &Tensor) -> Tensor {
        let s = self.spatial(x);
        let mut out = x.clone();
        for (k, slab) in out.data_mut().chunks_mut(s).enumerate() {
            let c = k % self.channels;
            let inv = 1.0 / (self.running_var.value[c] + EPS).sqrt();
            let (g, m, b) = (self.gamma.value[c] * inv, self.running_mean.value[c], self.beta.value[c]);
            slab.iter_mut().for_each(|v| *v = g * (*v - m) + b);
        }
        out
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let s = self.spatial(x);
        let n = (x.batch() * s) as f64;
        let mut mean = vec![0f64; self.channels];
        let mut var = vec![0f64; self.channels];
        for (k, slab) in x.data().chunks(s).enumerate() {
            mean[k % self.channels] += slab.iter().map(|&v| v as f64).sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for (k, slab) in x.data().chunks(s).enumerate() {
            let m = mean[k % self.channels];
            var[k % self.channels] += slab.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv: Vec<f32> = var.iter().map(|&v| 1.0 / (v as f32 + EPS).sqrt()).collect();
        let mut xhat = vec![0.0; x.data().len()];
        let mut out = vec![0.0; x.data().len()];
        for (k, ((slab, xh), o)) in x.data().chunks(s).zip(xhat.chunks_mut(s)).zip(out.chunks_mut(s)).enumerate() {
            let c = k % self.channels;
            let (m, iv, g, b) = (mean[c] as f32, inv[c], self.gamma.value[c], self.beta.value[c]);
            for j in 0..s {
                xh[j] = (slab[j] - m) * iv;
                o[j] = g * xh[j] + b;
            }
        }
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.channels {
            let rm = &mut self.running_mean.value[c];
            *rm = (1.0 - MOMENTUM) * *rm + MOMENTUM * mean[c] as f32;
            let rv = &mut self.running_var.value[c];
            *rv = (1.0 - MOMENTUM) * *rv + MOMENTUM * (var[c] * unbias) as f32;
        }
        self.cache = Some((xhat, inv, x.shape().to_vec()));
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (xhat, inv, shape) = self.cache.take().expect("backward without forward_train");
        let s: usize = shape[2..].iter().product();
        let n = (shape[0] * s) as f32;
        let mut sum_g = vec![0f32; self.channels];
        let mut sum_gx = vec![0f32; self.channels];
        for (k, (g, xh)) in grad.data().chunks(s).zip(xhat.chunks(s)).enumerate() {
            let c = k % self.channels;
            sum_g[c] += g.iter().sum::<f32>();
            sum_gx[c] += g.iter().zip(xh).map(|(a, b)| a * b).sum::<f32>();
        }
        for c in 0..self.channels {
            self.gamma.grad[c] += sum_gx[c];
            self.beta.grad[c] += sum_g[c];
        }
        let mut data = vec![0.0; grad.data().len()];
        for (k, ((g, xh), d)) in grad.data().chunks(s).zip(xhat.chunks(s)).zip(data.chunks_mut(s)).enumerate() {
            let c = k % self.channels;
            let scale = self.gamma.value[c] * inv[c] / n;
            for j in 0..s {
                d[j] = scale * (n * g[j] - sum_g[c] - xh[j] * sum_gx[c]);
            }
        }
        Tensor::new(shape, data)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}gamma"), &mut self.gamma);
        f(&format!("{prefix}beta"), &mut self.beta);
        f(&format!("{prefix}running_mean"), &mut self.running_mean);
        f(&format!("{prefix}running_var"), &mut self.running_var);
    }

    fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}gamma"), &self.gamma);
        f(&format!("{prefix}beta"), &self.beta);
        f(&format!("{prefix}running_mean"), &self.running_mean);
        f(&format!("{prefix}running_var"), &self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;

    #[test]
    fn normalizes_batch_statistics() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor::new(vec![2, 2, 2], vec![1.0, 3.0, 10.0, 10.0, 5.0, 7.0, 20.0, 20.0]);
        let y = bn.forward_train(&x);
        let ch0: Vec<f32> = [0, 1, 4, 5].iter().map(|&i| y.data()[i]).collect();
        let mean: f32 = ch0.iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-5);
        assert!(bn.running_mean.value[0] > 0.0);
    }

    #[test]
    fn gradients() {
        let mut bn = BatchNorm::new(3);
        bn.gamma.value = vec![0.5, 1.5, -1.0];
        bn.beta.value = vec![0.1, 0.0, -0.3];
        let x = Tensor::new(vec![2, 3, 4], (0..24).map(|i| ((i * 5 % 11) as f32) / 3.0).collect());
        gradcheck::check(&mut bn, &x, 3e-2);
    }
}
