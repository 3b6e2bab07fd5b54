use super::{Layer, Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Act {
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Silu,
}

const LEAK: f32 = 0.2;

impl Act {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Act::Relu => x.max(0.0),
            Act::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAK * x
                }
            }
            Act::Sigmoid => sigmoid(x),
            Act::Tanh => x.tanh(),
            Act::Silu => x * sigmoid(x),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Act::Relu => (x > 0.0) as u8 as f32,
            Act::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAK
                }
            }
            Act::Sigmoid => y * (1.0 - y),
            Act::Tanh => 1.0 - y * y,
            Act::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise activation layer.
pub struct Activation {
    act: Act,
    cache: Option<(Tensor, Tensor)>,
}

impl Activation {
    pub fn new(act: Act) -> Self {
        Self { act, cache: None }
    }

    fn run(&self, x: &Tensor) -> Tensor {
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| self.act.apply(v)).collect())
    }
}

impl Layer for Activation {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.run(x)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.run(x);
        self.cache = Some((x.clone(), y.clone()));
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (x, y) = self.cache.take().expect("backward without forward_train");
        let data = grad
            .data()
            .iter()
            .zip(x.data().iter().zip(y.data()))
            .map(|(&g, (&xv, &yv))| g * self.act.derivative(xv, yv))
            .collect();
        Tensor::new(grad.shape().to_vec(), data)
    }

    fn visit_params(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}

    fn visit_params_ref(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;

    #[test]
    fn gradients_for_smooth_activations() {
        let x = Tensor::new(vec![2, 4], vec![-2.0, -0.7, 0.3, 1.9, 0.9, -1.1, 2.5, -0.2]);
        for act in [Act::Sigmoid, Act::Tanh, Act::Silu, Act::Relu, Act::LeakyRelu] {
            gradcheck::check(&mut Activation::new(act), &x, 2e-2);
        }
    }

    #[test]
    fn sigmoid_is_stable_and_bounded() {
        for x in [-1e4f32, -50.0, 0.0, 50.0, 1e4] {
            let s = sigmoid(x);
            assert!((0.0..=1.0).contains(&s) && s.is_finite());
        }
    }
}
