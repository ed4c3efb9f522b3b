use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvShape, Observation};
use crate::error::{Error, Result};
use crate::goal::Planar;
use crate::nn::{checkpoint, Adam, AdamConfig, LayerSpec, NetSpec, Network, Scalar, Tensor};

use super::config::{ActorObjective, SacConfig};
use super::policy;
use super::replay::Batch;

/// Adam on a single scalar (the log temperature).
#[derive(Debug, Clone, PartialEq)]
struct ScalarAdam {
    config: AdamConfig,
    t: u64,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    fn new(config: AdamConfig) -> Self {
        ScalarAdam {
            config,
            t: 0,
            m: 0.0,
            v: 0.0,
        }
    }

    fn step(&mut self, x: &mut f64, g: f64) {
        let c = self.config;
        self.t += 1;
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g;
        let mhat = self.m / (1.0 - c.beta1.powi(self.t as i32));
        let vhat = self.v / (1.0 - c.beta2.powi(self.t as i32));
        *x -= c.lr * mhat / (vhat.sqrt() + c.eps);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticStats {
    /// Squared error averaged over batch and critics.
    pub loss: f64,
    pub mean_q: f64,
    pub mean_target: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorStats {
    pub loss: f64,
    pub mean_log_prob: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic: CriticStats,
    pub actor: ActorStats,
    pub alpha_loss: f64,
    pub alpha: f64,
}

/// Soft Bellman target `r + γ(1 − done)(min_q − α log π)`.
pub fn soft_target(reward: f64, gamma: f64, done: f64, min_q: f64, alpha_log_prob: f64) -> f64 {
    reward + gamma * (1.0 - done) * (min_q - alpha_log_prob)
}

pub fn encoder_spec(cfg: &SacConfig, shape: &EnvShape) -> NetSpec {
    let mut layers = Vec::new();
    for c in &cfg.conv_channels {
        layers.push(LayerSpec::Conv {
            out_channels: *c,
            kernel: cfg.conv_kernel,
            stride: cfg.conv_stride,
        });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Dense { width: cfg.latent_dim });
    layers.push(LayerSpec::LayerNorm);
    layers.push(LayerSpec::Tanh);
    NetSpec {
        input: vec![shape.channels, shape.height, shape.width],
        layers,
    }
}

fn check_finite<T: Scalar>(what: &str, t: &Tensor<T>, dump: impl FnOnce() -> String) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Training {
            message: format!("{what} became non-finite"),
            dump: dump(),
        })
    }
}

fn column<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data.iter().map(|v| v.to_f64().unwrap()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Encoder, actor, critic ensemble with Polyak targets, and temperature.
#[derive(Debug, Clone)]
pub struct Agent<T: Scalar> {
    pub config: SacConfig,
    pub shape: EnvShape,
    pub encoder: Network<T>,
    pub actor: Network<T>,
    pub critics: Vec<Network<T>>,
    pub targets: Vec<Network<T>>,
    log_alpha: f64,
    encoder_opt: Adam<T>,
    actor_opt: Adam<T>,
    critic_opts: Vec<Adam<T>>,
    alpha_opt: ScalarAdam,
    rng: ChaCha8Rng,
    updates: u64,
}

impl<T: Scalar> Agent<T> {
    pub fn new(config: SacConfig, shape: EnvShape, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Network::new(encoder_spec(&config, &shape), &mut rng)?;
        let head_in = config.latent_dim + shape.vector_dim;
        let actor = Network::new(NetSpec::mlp(head_in, &config.hidden, 2 * shape.action_dim), &mut rng)?;
        let mut critics = Vec::with_capacity(config.ensemble_size);
        for _ in 0..config.ensemble_size {
            critics.push(Network::new(
                NetSpec::mlp(head_in + shape.action_dim, &config.hidden, 1),
                &mut rng,
            )?);
        }
        let targets = critics.clone();
        let critic_cfg = AdamConfig::with_lr(config.critic_lr);
        let mut agent = Agent {
            encoder_opt: Adam::new(critic_cfg, &encoder),
            actor_opt: Adam::new(AdamConfig::with_lr(config.actor_lr), &actor),
            critic_opts: critics.iter().map(|c| Adam::new(critic_cfg, c)).collect(),
            alpha_opt: ScalarAdam::new(AdamConfig::with_lr(config.alpha_lr)),
            log_alpha: config.init_alpha.ln(),
            encoder,
            actor,
            critics,
            targets,
            shape,
            config,
            rng,
            updates: 0,
        };
        agent.clip_all();
        Ok(agent)
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn entropy_target(&self) -> f64 {
        self.config.entropy_target_for(self.shape.action_dim)
    }

    /// Total parameter count of encoder, actor and online critics.
    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.actor.param_count()
            + self.critics.iter().map(|c| c.param_count()).sum::<usize>()
    }

    fn clip_all(&mut self) {
        if !self.config.clip_weights {
            return;
        }
        let (k, s) = (self.config.kappa, self.config.s_l);
        self.encoder.clip_weights(k, s);
        self.actor.clip_weights(k, s);
        for c in &mut self.critics {
            c.clip_weights(k, s);
        }
    }

    pub fn image_tensor(&self, images: &[Planar]) -> Result<Tensor<T>> {
        let s = self.shape;
        let mut data = Vec::with_capacity(images.len() * s.channels * s.height * s.width);
        for im in images {
            if (im.channels, im.height, im.width) != (s.channels, s.height, s.width) {
                return Err(Error::input(format!(
                    "image is {}×{}×{}, agent expects {}×{}×{}",
                    im.channels, im.height, im.width, s.channels, s.height, s.width
                )));
            }
            data.extend(im.data.iter().map(|v| T::of(f64::from(*v))));
        }
        Tensor::from_vec(&[images.len(), s.channels, s.height, s.width], data)
    }

    /// Actor head output for a batch of observations.
    fn policy_head(&self, obs: &[&Observation]) -> Result<Tensor<T>> {
        let images: Vec<Planar> = obs.iter().map(|o| o.image()).collect();
        let x = self.image_tensor(&images)?;
        let z = self.encoder.predict(&x)?;
        let vd = self.shape.vector_dim;
        let mut v = Vec::with_capacity(obs.len() * vd);
        for o in obs {
            if o.vector.len() != vd {
                return Err(Error::input(format!(
                    "observation vector has {} entries, expected {vd}",
                    o.vector.len()
                )));
            }
            v.extend(o.vector.iter().map(|x| T::of(f64::from(*x))));
        }
        let v = Tensor::from_vec(&[obs.len(), vd], v)?;
        self.actor.predict(&Tensor::concat_rows(&[&z, &v])?)
    }

    /// Actions for a batch of observations: `tanh(mean)` when deterministic,
    /// otherwise a policy sample drawn from `rng`.
    pub fn act_batch(&self, obs: &[&Observation], deterministic: bool, rng: &mut impl Rng) -> Result<Vec<Vec<f32>>> {
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let head = self.policy_head(obs)?;
        let a_dim = self.shape.action_dim;
        let actions = if deterministic {
            policy::mean_action(&head, a_dim)
        } else {
            let eps = policy::standard_noise(obs.len(), a_dim, rng);
            policy::sample(&head, a_dim, self.config.log_std_bounds, &eps).action
        };
        Ok((0..obs.len())
            .map(|i| actions.row(i).iter().map(|v| v.to_f32().unwrap()).collect())
            .collect())
    }

    pub fn act(&self, obs: &Observation, deterministic: bool, rng: &mut impl Rng) -> Result<Vec<f32>> {
        Ok(self.act_batch(&[obs], deterministic, rng)?.remove(0))
    }

    /// One critic step. Returns the latent of `batch.obs` computed before
    /// the step, detached for the actor.
    pub fn critic_update(&mut self, batch: &Batch<T>) -> Result<(CriticStats, Tensor<T>)> {
        let b = batch.len();
        let cfg = self.config.clone();
        let a_dim = self.shape.action_dim;
        let alpha = self.alpha();
        self.encoder.zero_grad();
        for c in &mut self.critics {
            c.zero_grad();
        }

        let (z, enc_cache) = self.encoder.forward(&batch.obs)?;
        let z_next = self.encoder.predict(&batch.next_obs)?;
        let h_next = Tensor::concat_rows(&[&z_next, &batch.next_vec])?;
        let head_next = self.actor.predict(&h_next)?;
        let eps = policy::standard_noise(b, a_dim, &mut self.rng);
        let next = policy::sample(&head_next, a_dim, cfg.log_std_bounds, &eps);
        let x_next = Tensor::concat_rows(&[&h_next, &next.action])?;
        let subset = index::sample(&mut self.rng, cfg.ensemble_size, cfg.target_subset).into_vec();
        let mut min_q = vec![f64::INFINITY; b];
        for &i in &subset {
            let q = self.targets[i].predict(&x_next)?;
            for (m, v) in min_q.iter_mut().zip(&q.data) {
                *m = m.min(v.to_f64().unwrap());
            }
        }
        let y: Vec<f64> = (0..b)
            .map(|k| {
                soft_target(
                    batch.reward[k].to_f64().unwrap(),
                    cfg.gamma,
                    batch.done[k].to_f64().unwrap(),
                    min_q[k],
                    alpha * next.log_prob[k].to_f64().unwrap(),
                )
            })
            .collect();

        let x = Tensor::concat_rows(&[&z, &batch.vec, &batch.action])?;
        let widths = [cfg.latent_dim, self.shape.vector_dim + a_dim];
        let mut dz = Tensor::<T>::zeros(&[b, cfg.latent_dim]);
        let (mut loss, mut q_sum) = (0.0, 0.0);
        for c in &mut self.critics {
            let (q, cache) = c.forward(&x)?;
            let qv = column(&q);
            let mut dq = Tensor::zeros(&[b, 1]);
            for k in 0..b {
                let d = qv[k] - y[k];
                loss += d * d / b as f64;
                q_sum += qv[k];
                dq.data[k] = T::of(2.0 * d / b as f64);
            }
            let dx = c.backward(&cache, &dq, true)?.expect("input gradient requested");
            let dzi = dx.split_rows(&widths).swap_remove(0);
            for (a, g) in dz.data.iter_mut().zip(&dzi.data) {
                *a = *a + *g;
            }
        }
        let n = cfg.ensemble_size as f64;
        let stats = CriticStats {
            loss: loss / n,
            mean_q: q_sum / (n * b as f64),
            mean_target: mean(&y),
        };
        if !stats.loss.is_finite() {
            return Err(Error::Training {
                message: "critic loss became non-finite".into(),
                dump: serde_json::json!({
                    "update": self.updates,
                    "stats": stats,
                    "alpha": alpha,
                    "targets": y.iter().take(8).map(|v| v.to_string()).collect::<Vec<_>>(),
                    "rewards": column(&Tensor { shape: vec![b], data: batch.reward.clone() }).into_iter().take(8).collect::<Vec<_>>(),
                })
                .to_string(),
            });
        }
        self.encoder.backward(&enc_cache, &dz, false)?;
        self.encoder_opt.step(&mut self.encoder);
        for (c, o) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            o.step(c);
        }
        self.clip_all();
        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            t.polyak_from(c, cfg.tau)?;
        }
        self.encoder.zero_grad();
        Ok((stats, z))
    }

    /// One actor step on detached latents `z` with vector inputs `vec`.
    pub fn actor_update(&mut self, z: &Tensor<T>, vec: &Tensor<T>) -> Result<ActorStats> {
        let eps = policy::standard_noise(z.batch(), self.shape.action_dim, &mut self.rng);
        self.actor_update_with_noise(z, vec, &eps)
    }

    pub fn actor_update_with_noise(&mut self, z: &Tensor<T>, vec: &Tensor<T>, eps: &Tensor<T>) -> Result<ActorStats> {
        let b = z.batch();
        let a_dim = self.shape.action_dim;
        let bounds = self.config.log_std_bounds;
        let alpha = self.alpha();
        self.actor.zero_grad();
        let h = Tensor::concat_rows(&[z, vec])?;
        let (head, cache) = self.actor.forward(&h)?;
        check_finite("actor output", &head, || format!("{{\"update\": {}}}", self.updates))?;
        let s = policy::sample(&head, a_dim, bounds, eps);
        let x = Tensor::concat_rows(&[&h, &s.action])?;

        let n = self.critics.len();
        let mut qs = Vec::with_capacity(n);
        for c in &self.critics {
            let (q, cache) = c.forward(&x)?;
            qs.push((column(&q), cache));
        }
        // Per-sample weight of each critic in the aggregated Q.
        let weights: Vec<Vec<f64>> = match self.config.actor_objective {
            ActorObjective::MeanAll => vec![vec![1.0 / n as f64; b]; n],
            ActorObjective::MinSubset => {
                let subset = index::sample(&mut self.rng, n, self.config.target_subset).into_vec();
                let mut w = vec![vec![0.0; b]; n];
                for k in 0..b {
                    let best = *subset
                        .iter()
                        .min_by(|i, j| qs[**i].0[k].total_cmp(&qs[**j].0[k]))
                        .unwrap();
                    w[best][k] = 1.0;
                }
                w
            }
        };
        let widths = [h.row_len(), a_dim];
        let mut d_action = Tensor::<T>::zeros(&[b, a_dim]);
        let mut q_agg = vec![0.0; b];
        for (ci, (c, (q, cache))) in self.critics.iter_mut().zip(qs).enumerate() {
            if weights[ci].iter().all(|w| *w == 0.0) {
                continue;
            }
            let mut dq = Tensor::zeros(&[b, 1]);
            for k in 0..b {
                q_agg[k] += weights[ci][k] * q[k];
                dq.data[k] = T::of(-weights[ci][k] / b as f64);
            }
            let dx = c.backward(&cache, &dq, true)?.expect("input gradient requested");
            let da = dx.split_rows(&widths).swap_remove(1);
            for (a, g) in d_action.data.iter_mut().zip(&da.data) {
                *a = *a + *g;
            }
        }
        for c in &mut self.critics {
            c.zero_grad();
        }
        let lp = column(&Tensor {
            shape: vec![b],
            data: s.log_prob.clone(),
        });
        let loss = (0..b).map(|k| alpha * lp[k] - q_agg[k]).sum::<f64>() / b as f64;
        if !loss.is_finite() {
            return Err(Error::Training {
                message: "actor loss became non-finite".into(),
                dump: serde_json::json!({ "update": self.updates, "alpha": alpha, "mean_log_prob": mean(&lp) })
                    .to_string(),
            });
        }
        let d_lp = vec![T::of(alpha / b as f64); b];
        let d_head = policy::backward(&s, bounds, &d_action, &d_lp);
        self.actor.backward(&cache, &d_head, false)?;
        self.actor_opt.step(&mut self.actor);
        self.clip_all();
        Ok(ActorStats {
            loss,
            mean_log_prob: mean(&lp),
        })
    }

    /// Temperature step on `log α`; returns the temperature loss.
    pub fn alpha_update(&mut self, mean_log_prob: f64) -> f64 {
        let gap = mean_log_prob + self.entropy_target();
        let grad = -gap;
        let loss = -self.log_alpha * gap;
        let mut la = self.log_alpha;
        self.alpha_opt.step(&mut la, grad);
        self.log_alpha = la;
        loss
    }

    /// Critic, actor and temperature steps on one batch.
    pub fn update(&mut self, batch: &Batch<T>) -> Result<UpdateStats> {
        let (critic, z) = self.critic_update(batch)?;
        let actor = self.actor_update(&z, &batch.vec)?;
        let enc_grad = self.encoder.grad_norm();
        if enc_grad != 0.0 {
            return Err(Error::Training {
                message: "actor step leaked gradient into the encoder".into(),
                dump: format!("{{\"encoder_grad_norm\": {enc_grad}}}"),
            });
        }
        let alpha_loss = self.alpha_update(actor.mean_log_prob);
        self.updates += 1;
        Ok(UpdateStats {
            critic,
            actor,
            alpha_loss,
            alpha: self.alpha(),
        })
    }

    fn named(&self) -> Vec<(String, &Network<T>)> {
        let mut v = vec![
            ("encoder".to_string(), &self.encoder),
            ("actor".to_string(), &self.actor),
        ];
        for (i, c) in self.critics.iter().enumerate() {
            v.push((format!("critic{i}"), c));
        }
        for (i, c) in self.targets.iter().enumerate() {
            v.push((format!("target{i}"), c));
        }
        v
    }

    pub fn save(&self, dir: &Path, mut extra: serde_json::Map<String, serde_json::Value>) -> Result<()> {
        extra.insert("log_alpha".into(), self.log_alpha.into());
        extra.insert("updates".into(), self.updates.into());
        extra.insert(
            "sac".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        let named = self.named();
        let refs: Vec<(&str, &Network<T>)> = named.iter().map(|(n, net)| (n.as_str(), *net)).collect();
        checkpoint::save(dir, &refs, extra)
    }

    /// Restores weights and temperature from a checkpoint written by
    /// [`Agent::save`]. Optimizer moments restart from zero.
    pub fn load(dir: &Path, shape: EnvShape, seed: u64) -> Result<Self> {
        let manifest = checkpoint::read_manifest(dir)?;
        let config: SacConfig = manifest
            .extra
            .get("sac")
            .cloned()
            .ok_or_else(|| Error::input("checkpoint lacks the learner configuration"))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::input(e.to_string())))?;
        let mut agent = Agent::new(config, shape, seed)?;
        checkpoint::load_into(dir, &manifest, "encoder", &mut agent.encoder)?;
        checkpoint::load_into(dir, &manifest, "actor", &mut agent.actor)?;
        for i in 0..agent.critics.len() {
            checkpoint::load_into(dir, &manifest, &format!("critic{i}"), &mut agent.critics[i])?;
            checkpoint::load_into(dir, &manifest, &format!("target{i}"), &mut agent.targets[i])?;
        }
        if let Some(la) = manifest.extra.get("log_alpha").and_then(|v| v.as_f64()) {
            agent.log_alpha = la;
        }
        agent.updates = manifest.extra.get("updates").and_then(|v| v.as_u64()).unwrap_or(0);
        Ok(agent)
    }
}
