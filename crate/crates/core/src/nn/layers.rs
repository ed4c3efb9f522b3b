use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, MatRef, Scalar};

/// Learnable array with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Initialization bound; `Some` marks arrays that weight clipping acts on.
    pub init_bound: Option<f64>,
}

impl<T: Scalar> Param<T> {
    pub fn filled(name: &str, shape: &[usize], v: T, init_bound: Option<f64>) -> Self {
        let n = shape.iter().product();
        Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value: vec![v; n],
            grad: vec![T::zero(); n],
            init_bound,
        }
    }

    fn uniform(name: &str, shape: &[usize], bound: f64, clip: bool, rng: &mut impl Rng) -> Self {
        let mut p = Param::filled(name, shape, T::zero(), clip.then_some(bound));
        for v in &mut p.value {
            *v = T::of(rng.gen_range(-bound..=bound));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Valid (unpadded) 2-D convolution.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        width: usize,
    },
    Relu,
    Tanh,
    /// Normalizes each row of features, with learned gain and bias.
    LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Dense(Dense<T>),
    Relu,
    Tanh,
    LayerNorm(LayerNorm<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_shape: [usize; 3],
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_hw: [usize; 2],
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub features: usize,
    pub gain: Param<T>,
    pub bias: Param<T>,
    pub eps: f64,
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv { cols: Vec<T> },
    Dense { input: Vec<T> },
    Activation { output: Vec<T> },
    LayerNorm { xhat: Vec<T>, inv_std: Vec<T> },
}

/// Per-sample output shape of a layer, or `None` when the input cannot feed it.
pub fn output_shape(spec: &LayerSpec, input: &[usize]) -> Option<Vec<usize>> {
    match *spec {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
        } => {
            let &[_, h, w] = input else { return None };
            if kernel == 0 || stride == 0 || out_channels == 0 || kernel > h || kernel > w {
                return None;
            }
            Some(vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
        }
        LayerSpec::Dense { width } => (width > 0).then(|| vec![width]),
        LayerSpec::Relu | LayerSpec::Tanh => Some(input.to_vec()),
        LayerSpec::LayerNorm => (input.len() == 1).then(|| input.to_vec()),
    }
}

impl<T: Scalar> Layer<T> {
    /// Weights and biases uniform in ±1/√fan_in; layer norm starts at identity.
    pub fn init(spec: &LayerSpec, input: &[usize], index: usize, rng: &mut impl Rng) -> Self {
        match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
            } => {
                let out = output_shape(spec, input).expect("validated");
                let fan_in = input[0] * kernel * kernel;
                let bound = 1.0 / (fan_in as f64).sqrt();
                Layer::Conv(Conv2d {
                    in_shape: [input[0], input[1], input[2]],
                    out_channels,
                    kernel,
                    stride,
                    out_hw: [out[1], out[2]],
                    weight: Param::uniform(&format!("{index}.weight"), &[out_channels, fan_in], bound, true, rng),
                    bias: Param::uniform(&format!("{index}.bias"), &[out_channels], bound, false, rng),
                })
            }
            LayerSpec::Dense { width } => {
                let fan_in: usize = input.iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                Layer::Dense(Dense {
                    in_features: fan_in,
                    out_features: width,
                    weight: Param::uniform(&format!("{index}.weight"), &[width, fan_in], bound, true, rng),
                    bias: Param::uniform(&format!("{index}.bias"), &[width], bound, false, rng),
                })
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Tanh => Layer::Tanh,
            LayerSpec::LayerNorm => Layer::LayerNorm(LayerNorm {
                features: input[0],
                gain: Param::filled(&format!("{index}.gain"), &input[..1], T::one(), None),
                bias: Param::filled(&format!("{index}.bias"), &input[..1], T::zero(), None),
                eps: 1e-5,
            }),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::LayerNorm(n) => vec![&n.gain, &n.bias],
            Layer::Relu | Layer::Tanh => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::LayerNorm(n) => vec![&mut n.gain, &mut n.bias],
            Layer::Relu | Layer::Tanh => vec![],
        }
    }

    /// Forward over a batch of `batch` rows; the cache is filled when requested.
    pub fn forward(&self, x: &[T], batch: usize, keep: bool) -> (Vec<T>, Option<LayerCache<T>>) {
        match self {
            Layer::Conv(c) => c.forward(x, batch, keep),
            Layer::Dense(d) => {
                let mut y = vec![T::zero(); batch * d.out_features];
                for row in y.chunks_exact_mut(d.out_features) {
                    row.copy_from_slice(&d.bias.value);
                }
                gemm(
                    MatRef::new(x, batch, d.in_features),
                    MatRef::new(&d.weight.value, d.out_features, d.in_features).t(),
                    T::one(),
                    &mut y,
                );
                (y, keep.then(|| LayerCache::Dense { input: x.to_vec() }))
            }
            Layer::Relu => {
                let y: Vec<T> = x.iter().map(|v| v.max(T::zero())).collect();
                let cache = keep.then(|| LayerCache::Activation { output: y.clone() });
                (y, cache)
            }
            Layer::Tanh => {
                let y: Vec<T> = x.iter().map(|v| v.tanh()).collect();
                let cache = keep.then(|| LayerCache::Activation { output: y.clone() });
                (y, cache)
            }
            Layer::LayerNorm(n) => n.forward(x, batch, keep),
        }
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, cache: &LayerCache<T>, dy: &[T], batch: usize, need_dx: bool) -> Option<Vec<T>> {
        match (self, cache) {
            (Layer::Conv(c), LayerCache::Conv { cols }) => c.backward(cols, dy, batch, need_dx),
            (Layer::Dense(d), LayerCache::Dense { input }) => {
                gemm(
                    MatRef::new(dy, batch, d.out_features).t(),
                    MatRef::new(input, batch, d.in_features),
                    T::one(),
                    &mut d.weight.grad,
                );
                for row in dy.chunks_exact(d.out_features) {
                    for (g, v) in d.bias.grad.iter_mut().zip(row) {
                        *g = *g + *v;
                    }
                }
                need_dx.then(|| {
                    let mut dx = vec![T::zero(); batch * d.in_features];
                    gemm(
                        MatRef::new(dy, batch, d.out_features),
                        MatRef::new(&d.weight.value, d.out_features, d.in_features),
                        T::zero(),
                        &mut dx,
                    );
                    dx
                })
            }
            (Layer::Relu, LayerCache::Activation { output }) => need_dx.then(|| {
                dy.iter()
                    .zip(output)
                    .map(|(g, y)| if *y > T::zero() { *g } else { T::zero() })
                    .collect()
            }),
            (Layer::Tanh, LayerCache::Activation { output }) => {
                need_dx.then(|| dy.iter().zip(output).map(|(g, y)| *g * (T::one() - *y * *y)).collect())
            }
            (Layer::LayerNorm(n), LayerCache::LayerNorm { xhat, inv_std }) => n.backward(xhat, inv_std, dy, need_dx),
            _ => unreachable!("cache kind always matches its layer"),
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    fn patch_len(&self) -> usize {
        self.in_shape[0] * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_hw[0] * self.out_hw[1]
    }

    /// Rows `(c, ky, kx)`, columns `(oy, ox)`.
    fn im2col(&self, x: &[T], cols: &mut [T]) {
        let [c_in, h, w] = self.in_shape;
        let [oh, ow] = self.out_hw;
        let (k, s) = (self.kernel, self.stride);
        let p = oh * ow;
        for c in 0..c_in {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let src = &plane[(oy * s + ky) * w + kx..];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            dst.copy_from_slice(&src[..ow]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = src[ox * s];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], dx: &mut [T]) {
        let [c_in, h, w] = self.in_shape;
        let [oh, ow] = self.out_hw;
        let (k, s) = (self.kernel, self.stride);
        let p = oh * ow;
        for c in 0..c_in {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let base = (oy * s + ky) * w + kx;
                        for ox in 0..ow {
                            let d = &mut plane[base + ox * s];
                            *d = *d + row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[T], batch: usize, keep: bool) -> (Vec<T>, Option<LayerCache<T>>) {
        let in_len: usize = self.in_shape.iter().product();
        let (kk, p, oc) = (self.patch_len(), self.positions(), self.out_channels);
        let mut y = vec![T::zero(); batch * oc * p];
        let mut all_cols = if keep {
            vec![T::zero(); batch * kk * p]
        } else {
            Vec::new()
        };
        let mut scratch = if keep { Vec::new() } else { vec![T::zero(); kk * p] };
        for b in 0..batch {
            let cols: &mut [T] = if keep {
                &mut all_cols[b * kk * p..(b + 1) * kk * p]
            } else {
                &mut scratch
            };
            self.im2col(&x[b * in_len..(b + 1) * in_len], cols);
            let out = &mut y[b * oc * p..(b + 1) * oc * p];
            for (o, row) in out.chunks_exact_mut(p).enumerate() {
                row.fill(self.bias.value[o]);
            }
            gemm(
                MatRef::new(&self.weight.value, oc, kk),
                MatRef::new(cols, kk, p),
                T::one(),
                out,
            );
        }
        (y, keep.then_some(LayerCache::Conv { cols: all_cols }))
    }

    fn backward(&mut self, all_cols: &[T], dy: &[T], batch: usize, need_dx: bool) -> Option<Vec<T>> {
        let in_len: usize = self.in_shape.iter().product();
        let (kk, p, oc) = (self.patch_len(), self.positions(), self.out_channels);
        let mut dx = if need_dx {
            vec![T::zero(); batch * in_len]
        } else {
            Vec::new()
        };
        let mut dcols = vec![T::zero(); if need_dx { kk * p } else { 0 }];
        for b in 0..batch {
            let g = &dy[b * oc * p..(b + 1) * oc * p];
            let cols = &all_cols[b * kk * p..(b + 1) * kk * p];
            gemm(
                MatRef::new(g, oc, p),
                MatRef::new(cols, kk, p).t(),
                T::one(),
                &mut self.weight.grad,
            );
            for (o, row) in g.chunks_exact(p).enumerate() {
                let s = row.iter().fold(T::zero(), |a, v| a + *v);
                self.bias.grad[o] = self.bias.grad[o] + s;
            }
            if need_dx {
                gemm(
                    MatRef::new(&self.weight.value, oc, kk).t(),
                    MatRef::new(g, oc, p),
                    T::zero(),
                    &mut dcols,
                );
                self.col2im(&dcols, &mut dx[b * in_len..(b + 1) * in_len]);
            }
        }
        need_dx.then_some(dx)
    }
}

impl<T: Scalar> LayerNorm<T> {
    fn forward(&self, x: &[T], batch: usize, keep: bool) -> (Vec<T>, Option<LayerCache<T>>) {
        let f = self.features;
        let nf = T::of(f as f64);
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = if keep { vec![T::zero(); x.len()] } else { Vec::new() };
        let mut inv_std = Vec::with_capacity(if keep { batch } else { 0 });
        for b in 0..batch {
            let row = &x[b * f..(b + 1) * f];
            let mean = row.iter().fold(T::zero(), |a, v| a + *v) / nf;
            let var = row.iter().fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean)) / nf;
            let inv = T::one() / (var + T::of(self.eps)).sqrt();
            for i in 0..f {
                let h = (row[i] - mean) * inv;
                y[b * f + i] = self.gain.value[i] * h + self.bias.value[i];
                if keep {
                    xhat[b * f + i] = h;
                }
            }
            if keep {
                inv_std.push(inv);
            }
        }
        (y, keep.then_some(LayerCache::LayerNorm { xhat, inv_std }))
    }

    fn backward(&mut self, xhat: &[T], inv_std: &[T], dy: &[T], need_dx: bool) -> Option<Vec<T>> {
        let f = self.features;
        let nf = T::of(f as f64);
        let mut dx = if need_dx { vec![T::zero(); dy.len()] } else { Vec::new() };
        for (b, inv) in inv_std.iter().enumerate() {
            let (h, g) = (&xhat[b * f..(b + 1) * f], &dy[b * f..(b + 1) * f]);
            let (mut sum_d, mut sum_dh) = (T::zero(), T::zero());
            for i in 0..f {
                self.gain.grad[i] = self.gain.grad[i] + g[i] * h[i];
                self.bias.grad[i] = self.bias.grad[i] + g[i];
                let d = g[i] * self.gain.value[i];
                sum_d = sum_d + d;
                sum_dh = sum_dh + d * h[i];
            }
            if need_dx {
                for i in 0..f {
                    let d = g[i] * self.gain.value[i];
                    dx[b * f + i] = *inv / nf * (nf * d - sum_d - h[i] * sum_dh);
                }
            }
        }
        need_dx.then_some(dx)
    }
}
