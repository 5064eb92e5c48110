use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_net(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=2);
    let side = 2 * rng.random_range(3..=5);
    let builder = if rng.random_bool(0.5) {
        Network::builder(&[c, side, side])
            .conv(rng.random_range(1..=3), 3, 3, Activation::Relu)
            .max_pool()
            .flatten()
            .dense(rng.random_range(2..=10), Activation::Relu)
    } else {
        Network::builder(&[c, side, side]).dense(rng.random_range(2..=10), Activation::Relu)
    };
    let mut net = builder.dense(rng.random_range(2..=5), Activation::Softmax).build(seed).unwrap();
    // Non-zero biases so that relu gates are not all tied to the sign of Wx.
    for layer in net.layers_mut() {
        if let Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } = layer {
            *bias = Tensor::from_fn(bias.shape(), |_| rng.random_range(-0.3..0.3));
        }
    }
    net
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grad_input_matches_central_differences(seed in 0u64..10_000) {
        let net = random_net(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = Tensor::from_fn(net.input_shape(), |_| rng.random_range(-1.0..1.0));
        let c = rng.random_range(0..net.class_count());
        let g = net.grad_input(&x, c).unwrap();
        let h = 1e-5;
        let mut fd = vec![0.0; x.numel()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            *slot = (net.forward(&plus).unwrap().data()[c] - net.forward(&minus).unwrap().data()[c]) / (2.0 * h);
        }
        let fd = Tensor::new(x.shape(), fd).unwrap();
        let err = g.sub(&fd).unwrap().norm() / fd.norm().max(g.norm()).max(1e-8);
        prop_assert!(err <= 1e-4, "relative error {err}");
    }
}

#[test]
fn single_dense_gradient_is_weight_row() {
    let weight = Tensor::from_fn(&[3, 4], |i| i as f64 - 5.0);
    let net = Network::new(
        vec![4],
        vec![Layer::Dense {
            weight: weight.clone(),
            bias: Tensor::zeros(&[3]),
            activation: Activation::None,
        }],
    )
    .unwrap();
    let x = Tensor::new(&[4], vec![0.3, -2.0, 1.0, 9.0]).unwrap();
    assert_eq!(net.grad_input(&x, 1).unwrap().data(), &weight.data()[4..8]);
    assert!(matches!(net.grad_input(&x, 3), Err(Error::Input(_))));
}

#[test]
fn closed_gates_give_exact_zeros() {
    // Zero input with negative biases closes every hidden gate.
    let mut net = Network::builder(&[5]).dense(4, Activation::Relu).dense(2, Activation::None).build(1).unwrap();
    if let Layer::Dense { bias, .. } = &mut net.layers_mut()[0] {
        *bias = Tensor::new(&[4], vec![-0.1, 0.2, -0.3, 0.4]).unwrap();
    }
    let x = Tensor::zeros(&[5]);
    let g = net.grad_input(&x, 0).unwrap();
    let (w1, w2) = match net.layers() {
        [Layer::Dense { weight: a, .. }, Layer::Dense { weight: b, .. }] => (a.clone(), b.clone()),
        _ => unreachable!(),
    };
    // Only hidden units 1 and 3 are open.
    for i in 0..5 {
        let want = w2.get(&[0, 1]) * w1.get(&[1, i]) + w2.get(&[0, 3]) * w1.get(&[3, i]);
        assert!((g.data()[i] - want).abs() < 1e-14);
    }
}

#[test]
fn traced_logits_are_bitwise_forward_logits() {
    for seed in 0..10 {
        let net = random_net(seed);
        let x = Tensor::from_fn(net.input_shape(), |i| (i as f64 * 0.37).sin());
        assert_eq!(net.forward(&x).unwrap(), net.forward_traced(&x).unwrap().0);
    }
}
