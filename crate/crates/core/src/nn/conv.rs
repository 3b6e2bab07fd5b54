//! 3-D convolution and transposed convolution via im2col + GEMM.

use rand_chacha::ChaCha8Rng;

use super::{gemm, Layer, Param, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geom {
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geom {
    fn taps(&self) -> usize {
        self.k.iter().product()
    }

    /// Spatial dims after a strided convolution of `big`.
    fn small(&self, big: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|a| (big[a] + 2 * self.pad[a] - self.k[a]) / self.stride[a] + 1)
    }

    /// Spatial dims whose convolution yields `small`.
    fn big(&self, small: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|a| (small[a] - 1) * self.stride[a] + self.k[a] - 2 * self.pad[a])
    }

    /// Output positions `o` along `axis` for which kernel tap `k` reads
    /// inside the input: `0 <= o * stride + k - pad < big`.
    fn valid(&self, axis: usize, k: usize, big: usize, small: usize) -> (usize, usize) {
        let (s, p) = (self.stride[axis] as isize, self.pad[axis] as isize);
        let k = k as isize;
        let ceil_div = |a: isize, b: isize| if a <= 0 { 0 } else { (a + b - 1) / b };
        let lo = ceil_div(p - k, s) as usize;
        let hi = (ceil_div(big as isize + p - k, s) as usize).min(small);
        (lo.min(hi), hi)
    }

    /// Calls `f(col_offset, x_offset, len)` for every run of valid taps along
    /// the last axis, walking rows `(c, kd, kh, kw)` of the column matrix.
    fn for_each_run(&self, c: usize, big: [usize; 3], small: [usize; 3], mut f: impl FnMut(usize, usize, usize)) {
        let ns: usize = small.iter().product();
        let nb: usize = big.iter().product();
        let sw = self.stride[2];
        let mut row = 0;
        for ci in 0..c {
            for kd in 0..self.k[0] {
                let (dlo, dhi) = self.valid(0, kd, big[0], small[0]);
                for kh in 0..self.k[1] {
                    let (hlo, hhi) = self.valid(1, kh, big[1], small[1]);
                    for kw in 0..self.k[2] {
                        let (wlo, whi) = self.valid(2, kw, big[2], small[2]);
                        if wlo < whi {
                            for od in dlo..dhi {
                                let id = od * self.stride[0] + kd - self.pad[0];
                                for oh in hlo..hhi {
                                    let ih = oh * self.stride[1] + kh - self.pad[1];
                                    let col = row * ns + (od * small[1] + oh) * small[2] + wlo;
                                    let x = ci * nb + (id * big[1] + ih) * big[2] + wlo * sw + kw - self.pad[2];
                                    f(col, x, whi - wlo);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// `col[(c, kd, kh, kw), (od, oh, ow)] = x[c, od*s - p + kd, ...]`.
    fn im2col(&self, x: &[f32], c: usize, big: [usize; 3], small: [usize; 3], col: &mut [f32]) {
        col.fill(0.0);
        let sw = self.stride[2];
        self.for_each_run(c, big, small, |co, xo, n| {
            let dst = &mut col[co..co + n];
            if sw == 1 {
                dst.copy_from_slice(&x[xo..xo + n]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = x[xo + j * sw];
                }
            }
        });
    }

    /// Adjoint of `im2col`: scatters columns back onto `x`.
    fn col2im(&self, col: &[f32], c: usize, big: [usize; 3], small: [usize; 3], x: &mut [f32]) {
        let sw = self.stride[2];
        self.for_each_run(c, big, small, |co, xo, n| {
            let src = &col[co..co + n];
            if sw == 1 {
                for (d, s) in x[xo..xo + n].iter_mut().zip(src) {
                    *d += s;
                }
            } else {
                for (j, s) in src.iter().enumerate() {
                    x[xo + j * sw] += s;
                }
            }
        });
    }
}

fn spatial(x: &Tensor) -> [usize; 3] {
    assert_eq!(x.shape().len(), 5, "convolution expects [B, C, D, H, W], got {:?}", x.shape());
    [x.shape()[2], x.shape()[3], x.shape()[4]]
}

/// Strided 3-D convolution.
pub struct Conv3d {
    cin: usize,
    cout: usize,
    geom: Geom,
    weight: Param,
    bias: Param,
    cache: Option<(Vec<Vec<f32>>, Vec<usize>)>,
}

impl Conv3d {
    pub fn new(
        cin: usize,
        cout: usize,
        k: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let geom = Geom { k, stride, pad };
        let fan_in = cin * geom.taps();
        Self {
            cin,
            cout,
            geom,
            weight: Param::uniform(vec![cout, fan_in], (6.0 / fan_in as f32).sqrt(), rng),
            bias: Param::zeros(vec![cout]),
            cache: None,
        }
    }

    /// Cubic kernel convenience constructor.
    pub fn cubic(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(cin, cout, [k; 3], [stride; 3], [pad; 3], rng)
    }

    pub fn output_dims(&self, input: [usize; 3]) -> [usize; 3] {
        self.geom.small(input)
    }

    fn run(&self, x: &Tensor, mut keep: Option<&mut Vec<Vec<f32>>>) -> Tensor {
        assert_eq!(x.shape()[1], self.cin, "conv expects {} channels", self.cin);
        let big = spatial(x);
        let small = self.geom.small(big);
        let ns: usize = small.iter().product();
        let rows = self.cin * self.geom.taps();
        let b = x.batch();
        let mut out = vec![0.0; b * self.cout * ns];
        for i in 0..b {
            let mut col = vec![0.0; rows * ns];
            self.geom.im2col(x.item(i), self.cin, big, small, &mut col);
            let o = &mut out[i * self.cout * ns..(i + 1) * self.cout * ns];
            for (c, chunk) in o.chunks_mut(ns).enumerate() {
                chunk.fill(self.bias.value[c]);
            }
            gemm(self.cout, rows, ns, &self.weight.value, rows, 1, &col, ns, 1, o, 1.0);
            if let Some(k) = keep.as_deref_mut() {
                k.push(col);
            }
        }
        Tensor::new(vec![b, self.cout, small[0], small[1], small[2]], out)
    }
}

impl Layer for Conv3d {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.run(x, None)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut cols = Vec::with_capacity(x.batch());
        let y = self.run(x, Some(&mut cols));
        self.cache = Some((cols, x.shape().to_vec()));
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (cols, in_shape) = self.cache.take().expect("backward without forward_train");
        let big = [in_shape[2], in_shape[3], in_shape[4]];
        let small = spatial(grad);
        let ns: usize = small.iter().product();
        let nb: usize = big.iter().product();
        let rows = self.cin * self.geom.taps();
        let b = grad.batch();
        let mut dx = vec![0.0; b * self.cin * nb];
        let mut dcol = vec![0.0; rows * ns];
        for (i, col) in cols.iter().enumerate() {
            let g = grad.item(i);
            // dW[cout, rows] += g[cout, ns] col^T[ns, rows]
            gemm(self.cout, ns, rows, g, ns, 1, col, 1, ns, &mut self.weight.grad, 1.0);
            for (c, chunk) in g.chunks(ns).enumerate() {
                self.bias.grad[c] += chunk.iter().sum::<f32>();
            }
            // dcol[rows, ns] = W^T[rows, cout] g[cout, ns]
            gemm(rows, self.cout, ns, &self.weight.value, 1, rows, g, ns, 1, &mut dcol, 0.0);
            self.geom
                .col2im(&dcol, self.cin, big, small, &mut dx[i * self.cin * nb..(i + 1) * self.cin * nb]);
        }
        Tensor::new(in_shape, dx)
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

/// Transposed 3-D convolution: the adjoint of [`Conv3d`] with the same
/// kernel geometry, used for upsampling.
pub struct ConvTranspose3d {
    cin: usize,
    cout: usize,
    geom: Geom,
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

impl ConvTranspose3d {
    pub fn new(
        cin: usize,
        cout: usize,
        k: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let geom = Geom { k, stride, pad };
        let fan_in = (cin * geom.taps() / stride.iter().product::<usize>()).max(1);
        Self {
            cin,
            cout,
            geom,
            weight: Param::uniform(vec![cin, cout * geom.taps()], (6.0 / fan_in as f32).sqrt(), rng),
            bias: Param::zeros(vec![cout]),
            input: None,
        }
    }

    pub fn cubic(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(cin, cout, [k; 3], [stride; 3], [pad; 3], rng)
    }

    pub fn output_dims(&self, input: [usize; 3]) -> [usize; 3] {
        self.geom.big(input)
    }

    fn run(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.shape()[1], self.cin, "transposed conv expects {} channels", self.cin);
        let small = spatial(x);
        let big = self.geom.big(small);
        debug_assert_eq!(self.geom.small(big), small);
        let ns: usize = small.iter().product();
        let nb: usize = big.iter().product();
        let rows = self.cout * self.geom.taps();
        let b = x.batch();
        let mut out = vec![0.0; b * self.cout * nb];
        let mut col = vec![0.0; rows * ns];
        for i in 0..b {
            // col[rows, ns] = W^T[rows, cin] x[cin, ns]
            gemm(rows, self.cin, ns, &self.weight.value, 1, rows, x.item(i), ns, 1, &mut col, 0.0);
            let o = &mut out[i * self.cout * nb..(i + 1) * self.cout * nb];
            self.geom.col2im(&col, self.cout, big, small, o);
            for (c, chunk) in o.chunks_mut(nb).enumerate() {
                let bc = self.bias.value[c];
                chunk.iter_mut().for_each(|v| *v += bc);
            }
        }
        Tensor::new(vec![b, self.cout, big[0], big[1], big[2]], out)
    }
}

impl Layer for ConvTranspose3d {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.run(x)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        self.run(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward without forward_train");
        let small = spatial(&x);
        let big = spatial(grad);
        let ns: usize = small.iter().product();
        let nb: usize = big.iter().product();
        let rows = self.cout * self.geom.taps();
        let b = x.batch();
        let mut dx = vec![0.0; b * self.cin * ns];
        let mut gcol = vec![0.0; rows * ns];
        for i in 0..b {
            let g = grad.item(i);
            for (c, chunk) in g.chunks(nb).enumerate() {
                self.bias.grad[c] += chunk.iter().sum::<f32>();
            }
            self.geom.im2col(g, self.cout, big, small, &mut gcol);
            // dx[cin, ns] = W[cin, rows] gcol[rows, ns]
            gemm(self.cin, rows, ns, &self.weight.value, rows, 1, &gcol, ns, 1, &mut dx[i * self.cin * ns..(i + 1) * self.cin * ns], 0.0);
            // dW[cin, rows] += x[cin, ns] gcol^T[ns, rows]
            gemm(self.cin, ns, rows, x.item(i), ns, 1, &gcol, 1, ns, &mut self.weight.grad, 1.0);
        }
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
