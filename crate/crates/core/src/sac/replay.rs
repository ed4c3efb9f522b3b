use std::collections::VecDeque;

use rand::Rng;

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::goal::augment::{sample_shift, shift_into};
use crate::goal::STACK_DEPTH;
use crate::nn::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Observation,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_observation: Observation,
    /// True terminal: no bootstrapping from the next state.
    pub done: bool,
    /// Cut by the time limit; bootstraps like a non-terminal step.
    pub truncated: bool,
}

/// FIFO ring of transitions. Frames are shared between consecutive
/// observations, so memory grows with steps rather than with stack depth.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    capacity: usize,
    items: VecDeque<Transition>,
    inserted: u64,
}

impl ReplayStore {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(ReplayStore {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            inserted: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of pushes, including evicted transitions.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(Error::input("transition reward is not finite"));
        }
        if let Some(first) = self.items.front() {
            let same = first.action.len() == t.action.len()
                && first.observation.vector.len() == t.observation.vector.len()
                && first.observation.channels() == t.observation.channels();
            if !same {
                return Err(Error::input("transition shape differs from stored transitions"));
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.items.len() < batch || batch == 0 {
            return Err(Error::state(format!(
                "cannot sample {batch} transitions from a store holding {}",
                self.items.len()
            )));
        }
        Ok((0..batch).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    /// Samples and assembles a training batch, shifting every stacked image
    /// by an independent random offset.
    pub fn sample<T: Scalar>(&self, batch: usize, pad: usize, rng: &mut impl Rng) -> Result<Batch<T>> {
        let idx = self.sample_indices(batch, rng)?;
        Ok(Batch::assemble(idx.iter().map(|i| &self.items[*i]), pad, rng))
    }
}

/// Network-ready tensors for a set of transitions.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub obs: Tensor<T>,
    pub vec: Tensor<T>,
    pub action: Tensor<T>,
    pub reward: Vec<T>,
    pub next_obs: Tensor<T>,
    pub next_vec: Tensor<T>,
    /// 1 for true terminals, 0 otherwise (including time-limit cuts).
    pub done: Vec<T>,
}

fn image_into<T: Scalar>(o: &Observation, pad: usize, rng: &mut impl Rng, scratch: &mut Vec<f32>, out: &mut [T]) {
    let f = &o.frames[0];
    let (c, h, w) = (f.channels * STACK_DEPTH, f.height, f.width);
    scratch.resize(c * h * w, 0.0);
    for (k, frame) in o.frames.iter().enumerate() {
        frame.unpack_into(&mut scratch[k * frame.len()..(k + 1) * frame.len()]);
    }
    if pad == 0 {
        for (d, s) in out.iter_mut().zip(scratch.iter()) {
            *d = T::of(f64::from(*s));
        }
    } else {
        let (dx, dy) = sample_shift(pad, rng);
        let mut shifted = vec![0.0f32; scratch.len()];
        shift_into(scratch, c, h, w, pad, dx, dy, &mut shifted);
        for (d, s) in out.iter_mut().zip(&shifted) {
            *d = T::of(f64::from(*s));
        }
    }
}

impl<T: Scalar> Batch<T> {
    pub fn assemble<'a>(
        items: impl ExactSizeIterator<Item = &'a Transition>,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Batch<T> {
        let items: Vec<&Transition> = items.collect();
        let b = items.len();
        let first = &items[0];
        let f = &first.observation.frames[0];
        let img = [f.channels * STACK_DEPTH, f.height, f.width];
        let n_img: usize = img.iter().product();
        let (vd, ad) = (first.observation.vector.len(), first.action.len());
        let shape = |rest: &[usize]| {
            let mut s = vec![b];
            s.extend_from_slice(rest);
            s
        };
        let mut batch = Batch {
            obs: Tensor::zeros(&shape(&img)),
            vec: Tensor::zeros(&[b, vd]),
            action: Tensor::zeros(&[b, ad]),
            reward: Vec::with_capacity(b),
            next_obs: Tensor::zeros(&shape(&img)),
            next_vec: Tensor::zeros(&[b, vd]),
            done: Vec::with_capacity(b),
        };
        let mut scratch = Vec::new();
        let cast = |src: &[f32], dst: &mut [T]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::of(f64::from(*s));
            }
        };
        for (i, t) in items.iter().enumerate() {
            image_into(
                &t.observation,
                pad,
                rng,
                &mut scratch,
                &mut batch.obs.data[i * n_img..(i + 1) * n_img],
            );
            image_into(
                &t.next_observation,
                pad,
                rng,
                &mut scratch,
                &mut batch.next_obs.data[i * n_img..(i + 1) * n_img],
            );
            cast(&t.observation.vector, &mut batch.vec.data[i * vd..(i + 1) * vd]);
            cast(
                &t.next_observation.vector,
                &mut batch.next_vec.data[i * vd..(i + 1) * vd],
            );
            cast(&t.action, &mut batch.action.data[i * ad..(i + 1) * ad]);
            batch.reward.push(T::of(f64::from(t.reward)));
            batch.done.push(if t.done { T::one() } else { T::zero() });
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }
}
