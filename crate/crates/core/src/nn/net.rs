use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{output_shape, Layer, LayerCache, LayerSpec, Param};
use super::tensor::{Scalar, Tensor};

/// Layer list plus the per-sample input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// Per-sample shapes after every layer, starting with the input.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.is_empty() || self.input.contains(&0) {
            return Err(Error::config(format!("invalid network input shape {:?}", self.input)));
        }
        let mut shapes = vec![self.input.clone()];
        for (i, l) in self.layers.iter().enumerate() {
            let prev = shapes.last().unwrap();
            let next = output_shape(l, prev)
                .ok_or_else(|| Error::config(format!("layer {i} ({l:?}) cannot take input of shape {prev:?}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().unwrap())
    }

    /// Dense stack `in → hidden… → out` with ReLU between layers.
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> NetSpec {
        let mut layers = Vec::new();
        for h in hidden {
            layers.push(LayerSpec::Dense { width: *h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { width: output });
        NetSpec {
            input: vec![input],
            layers,
        }
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Saved activations tied to the parameter version that produced them.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    net_id: u64,
    version: u64,
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

#[derive(Debug, PartialEq)]
pub struct Network<T> {
    pub spec: NetSpec,
    pub layers: Vec<Layer<T>>,
    id: u64,
    version: u64,
}

impl<T: Scalar> Clone for Network<T> {
    fn clone(&self) -> Self {
        Network {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: NetSpec, rng: &mut impl Rng) -> Result<Self> {
        let shapes = spec.shapes()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| Layer::init(l, &shapes[i], i, rng))
            .collect();
        Ok(Network {
            spec,
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.spec.output().expect("validated at construction").iter().product()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Mutable access invalidates outstanding caches.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.version += 1;
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            for p in l.params_mut() {
                p.grad.iter_mut().for_each(|g| *g = T::zero());
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape.len() != self.spec.input.len() + 1 || x.shape[1..] != self.spec.input[..] {
            return Err(Error::input(format!(
                "network expects [B, {:?}] input, got {:?}",
                self.spec.input, x.shape
            )));
        }
        if !x.is_finite() {
            return Err(Error::input("network input contains non-finite values"));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
        self.check_input(x)?;
        let batch = x.batch();
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut cur = std::borrow::Cow::Borrowed(&x.data);
        for l in &self.layers {
            let (y, c) = l.forward(&cur, batch, keep);
            if let Some(c) = c {
                caches.push(c);
            }
            cur = std::borrow::Cow::Owned(y);
        }
        let mut shape = vec![batch];
        shape.extend(self.spec.output()?);
        Ok((
            Tensor {
                shape,
                data: cur.into_owned(),
            },
            caches,
        ))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        let (y, layers) = self.run(x, true)?;
        Ok((
            y,
            Cache {
                net_id: self.id,
                version: self.version,
                batch: x.batch(),
                layers,
            },
        ))
    }

    /// Forward without keeping activations.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, false)?.0)
    }

    /// Accumulates parameter gradients from `dy`; the input gradient is
    /// computed only when `need_dx` is set.
    pub fn backward(&mut self, cache: &Cache<T>, dy: &Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>> {
        if cache.net_id != self.id || cache.version != self.version {
            return Err(Error::state(
                "cache was produced by different or since-modified parameters",
            ));
        }
        let expected = cache.batch * self.output_len();
        if dy.data.len() != expected || dy.batch() != cache.batch {
            return Err(Error::input(format!(
                "output gradient has shape {:?}, expected batch {} × {}",
                dy.shape,
                cache.batch,
                self.output_len()
            )));
        }
        let mut grad = std::borrow::Cow::Borrowed(&dy.data);
        for (i, (l, c)) in self.layers.iter_mut().zip(&cache.layers).enumerate().rev() {
            if let Some(g) = l.backward(c, &grad, cache.batch, need_dx || i > 0) {
                grad = std::borrow::Cow::Owned(g);
            }
        }
        Ok(need_dx.then(|| {
            let mut shape = vec![cache.batch];
            shape.extend(&self.spec.input);
            Tensor {
                shape,
                data: grad.into_owned(),
            }
        }))
    }

    /// Copies every parameter value from a network of the same spec.
    pub fn copy_from(&mut self, other: &Network<T>) -> Result<()> {
        self.check_compatible(other)?;
        for (d, s) in self.params_mut().into_iter().zip(other.params()) {
            d.value.copy_from_slice(&s.value);
        }
        Ok(())
    }

    /// `self ← tau · online + (1 − tau) · self`.
    pub fn polyak_from(&mut self, online: &Network<T>, tau: f64) -> Result<()> {
        self.check_compatible(online)?;
        let (t, keep) = (T::of(tau), T::of(1.0 - tau));
        for (d, s) in self.params_mut().into_iter().zip(online.params()) {
            for (a, b) in d.value.iter_mut().zip(&s.value) {
                *a = t * *b + keep * *a;
            }
        }
        Ok(())
    }

    fn check_compatible(&self, other: &Network<T>) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::input("networks have different specs"));
        }
        Ok(())
    }

    /// Clamps clipped arrays to `±kappa · s_l · init_bound`; biases and
    /// normalization parameters are left alone.
    pub fn clip_weights(&mut self, kappa: f64, s_l: f64) {
        for p in self.params_mut() {
            if let Some(beta) = p.init_bound {
                let c = T::of(kappa * s_l * beta);
                for v in &mut p.value {
                    *v = v.max(-c).min(c);
                }
            }
        }
    }

    /// Largest `|w| / (init_bound)` over clipped arrays.
    pub fn max_weight_ratio(&self) -> f64 {
        self.params()
            .iter()
            .filter_map(|p| p.init_bound.map(|b| (p, b)))
            .flat_map(|(p, b)| p.value.iter().map(move |v| v.to_f64().unwrap().abs() / b))
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut out = Network::<U>::new(self.spec.clone(), &mut rng).expect("spec already validated");
        for (d, s) in out.params_mut().into_iter().zip(self.params()) {
            for (a, b) in d.value.iter_mut().zip(&s.value) {
                *a = U::of(b.to_f64().unwrap());
            }
        }
        out
    }
}
