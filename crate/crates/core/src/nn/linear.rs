use rand_chacha::ChaCha8Rng;

use super::{gemm, Layer, Param, Tensor};

/// Fully connected layer, `y = x W^T + b` on `[B, in]` inputs.
pub struct Linear {
    pub(crate) weight: Param,
    pub(crate) bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / inputs as f32).sqrt();
        Self {
            weight: Param::uniform(vec![outputs, inputs], bound, rng),
            bias: Param::zeros(vec![outputs]),
            input: None,
        }
    }

    /// All weights and biases zero; used for output heads that should start
    /// by predicting zero.
    pub fn zeroed(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(vec![outputs, inputs]),
            bias: Param::zeros(vec![outputs]),
            input: None,
        }
    }

    pub fn with_bias(mut self, bias: Vec<f32>) -> Self {
        assert_eq!(bias.len(), self.outputs(), "bias length");
        self.bias.value = bias;
        self
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    fn run(&self, x: &Tensor) -> Tensor {
        let (b, i, o) = (x.batch(), self.inputs(), self.outputs());
        assert_eq!(x.item_len(), i, "linear expects {i} inputs");
        let mut out = Vec::with_capacity(b * o);
        for _ in 0..b {
            out.extend_from_slice(&self.bias.value);
        }
        // [b, i] x [i, o] where W^T has strides (1, i)
        gemm(b, i, o, x.data(), i, 1, &self.weight.value, 1, i, &mut out, 1.0);
        Tensor::new(vec![b, o], out)
    }
}

impl Layer for Linear {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.run(x)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.run(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward without forward_train");
        let (b, i, o) = (x.batch(), self.inputs(), self.outputs());
        // dW[o, i] += g^T[o, b] x[b, i]
        gemm(o, b, i, grad.data(), 1, o, x.data(), i, 1, &mut self.weight.grad, 1.0);
        for r in 0..b {
            for (gb, g) in self.bias.grad.iter_mut().zip(grad.item(r)) {
                *gb += g;
            }
        }
        let mut dx = vec![0.0; b * i];
        gemm(b, o, i, grad.data(), o, 1, &self.weight.value, i, 1, &mut dx, 0.0);
        Tensor::new(x.shape().to_vec(), dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}weight"), &mut self.weight);
        f(&format!("{prefix}bias"), &mut self.bias);
    }

    fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}weight"), &self.weight);
        f(&format!("{prefix}bias"), &self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;

    #[test]
    fn forward_matches_manual() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::new(3, 2, &mut rng);
        l.weight.value = vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        l.bias.value = vec![0.5, -0.5];
        let y = l.forward(&Tensor::new(vec![1, 3], vec![1.0, 1.0, 2.0]));
        assert_eq!(y.data(), &[9.5, 0.5]);
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Linear::new(5, 4, &mut rng);
        let x = Tensor::new(vec![3, 5], (0..15).map(|i| (i as f32 * 0.37).sin()).collect());
        gradcheck::check(&mut l, &x, 2e-2);
    }
}
