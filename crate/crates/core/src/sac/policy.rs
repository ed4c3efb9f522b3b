//! Tanh-squashed diagonal Gaussian on top of an actor head that emits
//! `[mean, raw_log_std]` per action dimension.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{Scalar, Tensor};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Everything backward needs from one reparameterized draw.
#[derive(Debug, Clone)]
pub struct PolicySample<T> {
    pub action: Tensor<T>,
    pub log_prob: Vec<T>,
    eps: Vec<T>,
    std: Vec<T>,
    raw_tanh: Vec<T>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_dtanh(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

pub fn standard_noise<T: Scalar>(batch: usize, dim: usize, rng: &mut impl Rng) -> Tensor<T> {
    let data = (0..batch * dim)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor {
        shape: vec![batch, dim],
        data,
    }
}

/// Deterministic action `tanh(mean)`.
pub fn mean_action<T: Scalar>(head: &Tensor<T>, action_dim: usize) -> Tensor<T> {
    let b = head.batch();
    let mut data = Vec::with_capacity(b * action_dim);
    for i in 0..b {
        data.extend(head.row(i)[..action_dim].iter().map(|m| m.tanh()));
    }
    Tensor {
        shape: vec![b, action_dim],
        data,
    }
}

/// Draws `a = tanh(mean + std · eps)` with its log-density.
pub fn sample<T: Scalar>(head: &Tensor<T>, action_dim: usize, bounds: [f64; 2], eps: &Tensor<T>) -> PolicySample<T> {
    let b = head.batch();
    let (lo, hi) = (bounds[0], bounds[1]);
    let n = b * action_dim;
    let mut out = PolicySample {
        action: Tensor::zeros(&[b, action_dim]),
        log_prob: vec![T::zero(); b],
        eps: eps.data.clone(),
        std: vec![T::zero(); n],
        raw_tanh: vec![T::zero(); n],
    };
    for i in 0..b {
        let row = head.row(i);
        let mut lp = 0.0;
        for j in 0..action_dim {
            let k = i * action_dim + j;
            let mean = row[j].to_f64().unwrap();
            let rt = row[action_dim + j].to_f64().unwrap().tanh();
            let log_std = lo + 0.5 * (hi - lo) * (rt + 1.0);
            let std = log_std.exp();
            let e = eps.data[k].to_f64().unwrap();
            let u = mean + std * e;
            out.action.data[k] = T::of(u.tanh());
            out.std[k] = T::of(std);
            out.raw_tanh[k] = T::of(rt);
            lp += -0.5 * e * e - log_std - HALF_LN_2PI - log_dtanh(u);
        }
        out.log_prob[i] = T::of(lp);
    }
    out
}

/// Gradient with respect to the head output, given `dL/da` per action
/// element and `dL/dlogπ` per sample, holding the noise fixed.
pub fn backward<T: Scalar>(s: &PolicySample<T>, bounds: [f64; 2], d_action: &Tensor<T>, d_log_prob: &[T]) -> Tensor<T> {
    let b = s.log_prob.len();
    let a_dim = s.action.row_len();
    let half_span = 0.5 * (bounds[1] - bounds[0]);
    let mut head = Tensor::zeros(&[b, 2 * a_dim]);
    for i in 0..b {
        let glp = d_log_prob[i].to_f64().unwrap();
        for j in 0..a_dim {
            let k = i * a_dim + j;
            let a = s.action.data[k].to_f64().unwrap();
            let ga = d_action.data[k].to_f64().unwrap();
            // dlogπ/du = 2·tanh(u) from the squash correction.
            let du = ga * (1.0 - a * a) + glp * 2.0 * a;
            let std = s.std[k].to_f64().unwrap();
            let e = s.eps[k].to_f64().unwrap();
            let d_log_std = du * std * e - glp;
            let rt = s.raw_tanh[k].to_f64().unwrap();
            head.data[i * 2 * a_dim + j] = T::of(du);
            head.data[i * 2 * a_dim + a_dim + j] = T::of(d_log_std * half_span * (1.0 - rt * rt));
        }
    }
    head
}
