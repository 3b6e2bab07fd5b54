//! A small neural-network engine with hand-written backward passes.
//!
//! Every layer implements [`Layer`]: an immutable `forward` for inference and a
//! caching `forward_train` / `backward` pair for training. Layers are chained
//! with [`Seq`]; networks with skips or side inputs compose layers by hand.
//! Batch is always the leading tensor dimension. Convolutions work on
//! `[B, C, D, H, W]`; 1-D signals use `D = H = 1`.

mod act;
mod adam;
pub mod checkpoint;
mod conv;
mod linear;
mod norm;

pub use act::{sigmoid, Act, Activation};
pub use adam::Adam;
pub use conv::{Conv3d, ConvTranspose3d};
pub use linear::Linear;
pub use norm::BatchNorm;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?} does not match {} values", data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self, b: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    /// Concatenates along the last dimension of 2-D tensors.
    pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
        let b = parts[0].shape[0];
        let widths: Vec<usize> = parts.iter().map(|t| t.item_len()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(b * total);
        for i in 0..b {
            for t in parts {
                data.extend_from_slice(t.item(i));
            }
        }
        Tensor::new(vec![b, total], data)
    }

    /// Splits a 2-D tensor's columns into pieces of the given widths.
    pub fn split_cols(&self, widths: &[usize]) -> Vec<Tensor> {
        let b = self.shape[0];
        let total = self.item_len();
        assert_eq!(widths.iter().sum::<usize>(), total);
        let mut out: Vec<Vec<f32>> = widths.iter().map(|w| Vec::with_capacity(b * w)).collect();
        for i in 0..b {
            let row = self.item(i);
            let mut off = 0;
            for (k, &w) in widths.iter().enumerate() {
                out[k].extend_from_slice(&row[off..off + w]);
                off += w;
            }
        }
        out.into_iter().zip(widths).map(|(d, &w)| Tensor::new(vec![b, w], d)).collect()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A learnable (or buffered) parameter with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
    /// Buffers such as running statistics are saved but never optimized.
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self { value, grad, shape, trainable: true }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn buffer(shape: Vec<usize>, value: Vec<f32>) -> Self {
        Self { trainable: false, ..Self::new(shape, value) }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: Vec<usize>, bound: f32, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(shape, value)
    }
}

/// A differentiable building block.
pub trait Layer: Send + Sync {
    /// Inference pass; never mutates state.
    fn forward(&self, x: &Tensor) -> Tensor;

    /// Training pass; caches whatever `backward` needs.
    fn forward_train(&mut self, x: &Tensor) -> Tensor;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad: &Tensor) -> Tensor;

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
}

/// Layers applied in order.
#[derive(Default)]
pub struct Seq {
    layers: Vec<Box<dyn Layer>>,
}

impl Seq {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, layer: impl Layer + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Seq {
    fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h);
        }
        h
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward_train(&h);
        }
        h
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}{i}."), f);
        }
    }

    fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params_ref(&format!("{prefix}{i}."), f);
        }
    }
}

/// Reshapes the non-batch dimensions.
pub struct Reshape {
    to: Vec<usize>,
    from: Option<Vec<usize>>,
}

impl Reshape {
    pub fn new(to: Vec<usize>) -> Self {
        Self { to, from: None }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let mut shape = vec![x.batch()];
        shape.extend_from_slice(&self.to);
        x.clone().reshape(shape)
    }
}

impl Layer for Reshape {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.apply(x)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.from = Some(x.shape().to_vec());
        self.apply(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let from = self.from.take().expect("backward without forward_train");
        grad.clone().reshape(from)
    }

    fn visit_params(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}

    fn visit_params_ref(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
}

/// Zeroes all accumulated gradients.
pub fn zero_grad(layer: &mut dyn Layer) {
    layer.visit_params("", &mut |_, p| p.grad.fill(0.0));
}

/// Total number of trainable scalars.
pub fn param_count(layer: &dyn Layer) -> usize {
    let mut n = 0;
    layer.visit_params_ref("", &mut |_, p| {
        if p.trainable {
            n += p.value.len()
        }
    });
    n
}

/// `C = alpha * A B + beta * C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: bounds checked above; matrixmultiply reads A and B within the
    // stated strides and writes the m x n row-major block of C.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Errors when `x` does not have `expected` trailing dimensions.
pub fn check_item_shape(x: &Tensor, expected: &[usize]) -> Result<()> {
    if &x.shape()[1..] != expected {
        return Err(Error::Shape(format!(
            "expected item shape {expected:?}, got {:?}",
            &x.shape()[1..]
        )));
    }
    Ok(())
}
