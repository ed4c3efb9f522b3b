//! Small differentiable networks: convolution, dense, activations, layer
//! norm, Adam and weight clipping.
//!
//! Each [`Network`] is a straight chain of layers. A forward pass returns a
//! [`Cache`] bound to the exact parameter version it saw; backward refuses a
//! cache whose parameters have since changed. Gradients accumulate into the
//! parameters until [`Network::zero_grad`].

pub mod checkpoint;
mod layers;
mod net;
mod optim;
mod tensor;

pub use layers::{Conv2d, Dense, Layer, LayerCache, LayerNorm, LayerSpec, Param};
pub use net::{Cache, NetSpec, Network};
pub use optim::{Adam, AdamConfig};
pub use tensor::{gemm, MatRef, Scalar, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut impl Rng, away_from_zero: bool) -> Tensor<f64> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if away_from_zero {
                    let m = rng.gen_range(0.05..1.0);
                    if rng.gen_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn loss(net: &Network<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
        net.predict(x)
            .unwrap()
            .data
            .iter()
            .zip(&r.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    /// Max relative error of analytic vs central-difference gradients over
    /// every parameter and input element.
    fn gradient_error(net: &mut Network<f64>, x: &Tensor<f64>, rng: &mut impl Rng) -> f64 {
        let h = 1e-5;
        let (y, cache) = net.forward(x).unwrap();
        let r = random_tensor(&y.shape, rng, false);
        net.zero_grad();
        let dx = net.backward(&cache, &r, true).unwrap().unwrap();
        let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

        let mut worst = 0.0f64;
        for (pi, grads) in analytic.iter().enumerate() {
            for (i, a) in grads.iter().enumerate() {
                let orig = net.params()[pi].value[i];
                net.params_mut()[pi].value[i] = orig + h;
                let lp = loss(net, x, &r);
                net.params_mut()[pi].value[i] = orig - h;
                let lm = loss(net, x, &r);
                net.params_mut()[pi].value[i] = orig;
                worst = worst.max(rel_err(*a, (lp - lm) / (2.0 * h)));
            }
        }
        let mut xp = x.clone();
        for i in 0..x.data.len() {
            xp.data[i] = x.data[i] + h;
            let lp = loss(net, &xp, &r);
            xp.data[i] = x.data[i] - h;
            let lm = loss(net, &xp, &r);
            xp.data[i] = x.data[i];
            worst = worst.max(rel_err(dx.data[i], (lp - lm) / (2.0 * h)));
        }
        worst
    }

    fn check_layer(make: impl Fn(&mut ChaCha8Rng) -> (NetSpec, usize, bool), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for instance in 0..100 {
            let (spec, batch, away) = make(&mut rng);
            let mut net = Network::<f64>::new(spec.clone(), &mut rng).unwrap();
            // Non-trivial layer-norm affine parameters.
            for p in net.params_mut() {
                if p.init_bound.is_none() && p.name.ends_with("gain") {
                    p.value.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
                }
            }
            let mut shape = vec![batch];
            shape.extend(&spec.input);
            let x = random_tensor(&shape, &mut rng, away);
            let err = gradient_error(&mut net, &x, &mut rng);
            assert!(err < 1e-4, "instance {instance} of {spec:?}: relative error {err}");
        }
    }

    #[test]
    fn conv_gradients() {
        check_layer(
            |rng| {
                let c = rng.gen_range(1..4);
                let k = rng.gen_range(1..4);
                let s = rng.gen_range(1..3);
                let h = rng.gen_range(k..k + 5);
                let w = rng.gen_range(k..k + 5);
                let spec = NetSpec {
                    input: vec![c, h, w],
                    layers: vec![LayerSpec::Conv {
                        out_channels: rng.gen_range(1..4),
                        kernel: k,
                        stride: s,
                    }],
                };
                (spec, rng.gen_range(1..3), false)
            },
            1,
        );
    }

    #[test]
    fn dense_gradients() {
        check_layer(
            |rng| {
                let spec = NetSpec {
                    input: vec![rng.gen_range(1..8)],
                    layers: vec![LayerSpec::Dense {
                        width: rng.gen_range(1..8),
                    }],
                };
                (spec, rng.gen_range(1..4), false)
            },
            2,
        );
    }

    #[test]
    fn relu_gradients() {
        check_layer(
            |rng| {
                let spec = NetSpec {
                    input: vec![rng.gen_range(1..12)],
                    layers: vec![LayerSpec::Relu],
                };
                (spec, rng.gen_range(1..4), true)
            },
            3,
        );
    }

    #[test]
    fn tanh_gradients() {
        check_layer(
            |rng| {
                let spec = NetSpec {
                    input: vec![rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4)],
                    layers: vec![LayerSpec::Tanh],
                };
                (spec, rng.gen_range(1..4), false)
            },
            4,
        );
    }

    #[test]
    fn layer_norm_gradients() {
        check_layer(
            |rng| {
                let spec = NetSpec {
                    input: vec![rng.gen_range(2..10)],
                    layers: vec![LayerSpec::LayerNorm],
                };
                (spec, rng.gen_range(1..4), false)
            },
            5,
        );
    }

    fn encoder_spec() -> NetSpec {
        NetSpec {
            input: vec![2, 9, 11],
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Conv {
                    out_channels: 2,
                    kernel: 2,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Dense { width: 5 },
                LayerSpec::LayerNorm,
                LayerSpec::Tanh,
            ],
        }
    }

    #[test]
    fn composed_network_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let mut net = Network::<f64>::new(encoder_spec(), &mut rng).unwrap();
            let x = random_tensor(&[2, 2, 9, 11], &mut rng, false);
            let err = gradient_error(&mut net, &x, &mut rng);
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn identity_dense_passes_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::<f64>::new(NetSpec::mlp(4, &[], 4), &mut rng).unwrap();
        for p in net.params_mut() {
            let n = p.shape[0];
            for (i, v) in p.value.iter_mut().enumerate() {
                *v = if p.shape.len() == 2 && i % (n + 1) == 0 {
                    1.0
                } else {
                    0.0
                };
            }
        }
        let x = Tensor::from_vec(&[2, 4], vec![0.5, -1.0, 2.0, 3.0, 0.0, 0.1, 0.2, 0.3]).unwrap();
        assert_eq!(net.predict(&x).unwrap().data, x.data);
    }

    #[test]
    fn one_by_one_conv_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = NetSpec {
            input: vec![1, 3, 4],
            layers: vec![LayerSpec::Conv {
                out_channels: 1,
                kernel: 1,
                stride: 1,
            }],
        };
        let mut net = Network::<f64>::new(spec, &mut rng).unwrap();
        let mut ps = net.params_mut();
        let (w, b) = ps.split_at_mut(1);
        w[0].value[0] = 2.0;
        b[0].value[0] = 0.0;
        let x = Tensor::from_vec(&[1, 1, 3, 4], vec![0.5; 12]).unwrap();
        assert!(net.predict(&x).unwrap().data.iter().all(|v| *v == 1.0));
    }

    /// Direct nested-loop evaluation of the encoder spec.
    fn straight_line(net: &Network<f64>, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut shape = net.spec.input.clone();
        for layer in &net.layers {
            match layer {
                Layer::Conv(c) => {
                    let [ci, h, w] = [shape[0], shape[1], shape[2]];
                    let (k, s) = (c.kernel, c.stride);
                    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
                    let mut out = vec![0.0; c.out_channels * oh * ow];
                    for o in 0..c.out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = c.bias.value[o];
                                for ch in 0..ci {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let wv = c.weight.value[o * ci * k * k + (ch * k + ky) * k + kx];
                                            acc += wv * cur[(ch * h + oy * s + ky) * w + ox * s + kx];
                                        }
                                    }
                                }
                                out[(o * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                    cur = out;
                    shape = vec![c.out_channels, oh, ow];
                }
                Layer::Dense(d) => {
                    cur = (0..d.out_features)
                        .map(|o| {
                            d.bias.value[o]
                                + (0..d.in_features)
                                    .map(|i| d.weight.value[o * d.in_features + i] * cur[i])
                                    .sum::<f64>()
                        })
                        .collect();
                    shape = vec![d.out_features];
                }
                Layer::Relu => cur.iter_mut().for_each(|v| *v = v.max(0.0)),
                Layer::Tanh => cur.iter_mut().for_each(|v| *v = v.tanh()),
                Layer::LayerNorm(n) => {
                    let f = cur.len() as f64;
                    let mean = cur.iter().sum::<f64>() / f;
                    let var = cur.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f;
                    cur = cur
                        .iter()
                        .enumerate()
                        .map(|(i, v)| n.gain.value[i] * (v - mean) / (var + n.eps).sqrt() + n.bias.value[i])
                        .collect();
                }
            }
        }
        cur
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let net = Network::<f64>::new(encoder_spec(), &mut rng).unwrap();
            let x = random_tensor(&[3, 2, 9, 11], &mut rng, false);
            let y = net.predict(&x).unwrap();
            for b in 0..3 {
                let expected = straight_line(&net, x.row(b));
                for (a, e) in y.row(b).iter().zip(&expected) {
                    assert!((a - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Network::<f64>::new(NetSpec::mlp(3, &[], 2), &mut rng).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![0.5, -2.0, 4.0]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        net.backward(&cache, &Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap(), false)
            .unwrap();
        let w = &net.params()[0].grad;
        assert_eq!(w, &vec![0.5, -2.0, 4.0, 0.5, -2.0, 4.0]);
        assert_eq!(net.params()[1].grad, vec![1.0, 1.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Network::<f64>::new(encoder_spec(), &mut rng).unwrap();
        let x = random_tensor(&[2, 2, 9, 11], &mut rng, false);
        let (y, cache) = net.forward(&x).unwrap();
        net.backward(&cache, &Tensor::zeros(&y.shape), false).unwrap();
        assert_eq!(net.grad_norm(), 0.0);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut net = Network::<f64>::new(NetSpec::mlp(3, &[4], 2), &mut rng).unwrap();
        let x = random_tensor(&[2, 3], &mut rng, false);
        let (y, cache) = net.forward(&x).unwrap();
        net.clip_weights(2.0, 2f64.sqrt());
        assert!(matches!(net.backward(&cache, &y, false), Err(Error::State(_))));
        let other = net.clone();
        let (_, c2) = other.forward(&x).unwrap();
        assert!(matches!(net.backward(&c2, &y, false), Err(Error::State(_))));
    }

    #[test]
    fn input_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::<f64>::new(NetSpec::mlp(3, &[], 2), &mut rng).unwrap();
        assert!(matches!(net.predict(&Tensor::zeros(&[1, 4])), Err(Error::Input(_))));
        let bad = Tensor::from_vec(&[1, 3], vec![0.0, f64::NAN, 0.0]).unwrap();
        assert!(matches!(net.predict(&bad), Err(Error::Input(_))));
        let spec = NetSpec {
            input: vec![1, 2, 2],
            layers: vec![LayerSpec::Conv {
                out_channels: 1,
                kernel: 3,
                stride: 1,
            }],
        };
        assert!(Network::<f64>::new(spec, &mut rng).is_err());
    }

    #[test]
    fn adam_matches_hand_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut net = Network::<f64>::new(NetSpec::mlp(1, &[], 1), &mut rng).unwrap();
        let cfg = AdamConfig::with_lr(0.1);
        let mut adam = Adam::new(cfg, &net);
        let w0 = net.params()[0].value[0];
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, w0);
        for t in 1..=3 {
            for p in net.params_mut() {
                p.grad.iter_mut().for_each(|g| *g = 1.0);
            }
            adam.step(&mut net);
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mhat / (vhat.sqrt() + 1e-8);
            assert!((net.params()[0].value[0] - w).abs() < 1e-12);
        }
        // With a constant unit gradient every step moves by lr / (1 + eps').
        assert!((w0 - w - 0.3).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_decays_moments_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut net = Network::<f64>::new(NetSpec::mlp(2, &[], 2), &mut rng).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.01), &net);
        adam.m[0][0] = 0.5;
        adam.v[0][0] = 0.25;
        net.params_mut()[0].grad.iter_mut().for_each(|g| *g = 0.0);
        let before: Vec<f64> = net.params()[1].value.clone();
        adam.step(&mut net);
        assert_eq!(net.params()[1].value, before);
        assert!((adam.m[0][0] - 0.45).abs() < 1e-15);
        assert!((adam.v[0][0] - 0.24975).abs() < 1e-15);

        let run = || {
            let mut r = ChaCha8Rng::seed_from_u64(14);
            let mut n = Network::<f64>::new(NetSpec::mlp(2, &[3], 1), &mut r).unwrap();
            let mut a = Adam::new(AdamConfig::with_lr(0.01), &n);
            for p in n.params_mut() {
                p.grad
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, g)| *g = i as f64 * 0.1 - 0.2);
            }
            a.step(&mut n);
            n.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_examples_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut net = Network::<f64>::new(NetSpec::mlp(2, &[], 2), &mut rng).unwrap();
        let before = net.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        net.clip_weights(2.0, 2f64.sqrt());
        assert_eq!(before, net.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>());

        {
            let mut ps = net.params_mut();
            ps[0].init_bound = Some(1.0);
            ps[0].value[..2].copy_from_slice(&[5.0, -5.0]);
            ps[1].value[0] = 100.0;
        }
        net.clip_weights(2.0, 2f64.sqrt());
        let w = &net.params()[0].value;
        assert!((w[0] - 2.828427).abs() < 1e-6 && (w[1] + 2.828427).abs() < 1e-6);
        assert_eq!(net.params()[1].value[0], 100.0);
        let once = net.params()[0].value.clone();
        net.clip_weights(2.0, 2f64.sqrt());
        assert_eq!(once, net.params()[0].value);
    }

    #[test]
    fn polyak_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let online = Network::<f64>::new(NetSpec::mlp(3, &[4], 2), &mut rng).unwrap();
        let mut target = Network::<f64>::new(NetSpec::mlp(3, &[4], 2), &mut rng).unwrap();
        let prev = target.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        target.polyak_from(&online, 0.005).unwrap();
        for ((t, o), p) in target.params().iter().zip(online.params()).zip(&prev) {
            for i in 0..t.len() {
                assert!((t.value[i] - (0.005 * o.value[i] + 0.995 * p[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = Network::<f32>::new(encoder_spec(), &mut rng).unwrap();
        checkpoint::save(dir.path(), &[("enc", &net)], Default::default()).unwrap();
        let manifest = checkpoint::read_manifest(dir.path()).unwrap();
        let mut other = Network::<f32>::new(encoder_spec(), &mut rng).unwrap();
        checkpoint::load_into(dir.path(), &manifest, "enc", &mut other).unwrap();
        assert_eq!(
            net.params().iter().map(|p| &p.value).collect::<Vec<_>>(),
            other.params().iter().map(|p| &p.value).collect::<Vec<_>>()
        );
        let mut wrong = Network::<f32>::new(NetSpec::mlp(3, &[], 2), &mut rng).unwrap();
        assert!(matches!(
            checkpoint::load_into(dir.path(), &manifest, "enc", &mut wrong),
            Err(Error::Input(_))
        ));
        assert!(checkpoint::load_into(dir.path(), &manifest, "missing", &mut other).is_err());
    }

    #[test]
    fn f32_and_f64_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let net = Network::<f64>::new(encoder_spec(), &mut rng).unwrap();
        let x = random_tensor(&[2, 2, 9, 11], &mut rng, false);
        let y64 = net.predict(&x).unwrap();
        let y32 = net.cast::<f32>().predict(&x.cast()).unwrap();
        for (a, b) in y64.data.iter().zip(&y32.data) {
            assert!((a - f64::from(*b)).abs() < 1e-4);
        }
    }
}
