//! Gradient-based reference attributions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;

pub const SMOOTH_GRAD_SAMPLES: usize = 50;

/// Gradient of logit `class` with respect to the input.
pub fn gradient_saliency(net: &Network, x: &Tensor, class: usize) -> Result<Tensor> {
    net.grad_input(x, class)
}

/// `0.15 * (max(x) - min(x))`
pub fn default_sigma(x: &Tensor) -> f64 {
    let (lo, hi) = x
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    0.15 * (hi - lo)
}

/// Mean gradient over `n_samples` copies of `x` with `N(0, sigma²)` noise.
/// With `sigma == 0` this is exactly [`gradient_saliency`].
pub fn smooth_grad(net: &Network, x: &Tensor, class: usize, n_samples: usize, sigma: f64, seed: u64) -> Result<Tensor> {
    if n_samples == 0 {
        return Err(Error::input("smooth_grad needs at least one sample"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::input(format!("noise level must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return gradient_saliency(net, x, class);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<Tensor> = (0..n_samples)
        .map(|_| Tensor::from_fn(x.shape(), |i| x.data()[i] + normal.sample(&mut rng)))
        .collect();
    net.mean_grad_input(&noisy, class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Architecture, Layer};
    use rand::Rng;

    fn linear_net() -> Network {
        Network::new(
            vec![3],
            vec![Layer::Dense {
                weight: Tensor::new(&[2, 3], vec![1., -2., 0.5, 3., 0., -1.]).unwrap(),
                bias: Tensor::new(&[2], vec![0.1, -0.2]).unwrap(),
                activation: Activation::None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn linear_net_gradient_is_the_weight_row() {
        let net = linear_net();
        for x in [vec![0., 0., 0.], vec![5., -1., 2.]] {
            let x = Tensor::new(&[3], x).unwrap();
            assert_eq!(gradient_saliency(&net, &x, 1).unwrap().data(), &[3., 0., -1.]);
        }
        let x = Tensor::new(&[3], vec![0.2, 0.4, 0.9]).unwrap();
        let sg = smooth_grad(&net, &x, 0, 500, 0.3, 1).unwrap();
        // Constant gradient: the Monte-Carlo mean has no spread at all.
        let bound = 3.0 * 0.3 * (1.0f64 + 4.0 + 0.25).sqrt() / 500f64.sqrt();
        assert!(sg.sub(&gradient_saliency(&net, &x, 0).unwrap()).unwrap().norm() <= bound);
    }

    #[test]
    fn zero_sigma_is_bitwise_gradient() {
        let net = Network::architecture(Architecture::CnnShapes, 3);
        let x = Tensor::from_fn(&[1, 32, 32], |i| ((i * 17) % 23) as f64 / 23.0);
        let g = gradient_saliency(&net, &x, 2).unwrap();
        for n in [1, 7] {
            assert_eq!(smooth_grad(&net, &x, 2, n, 0.0, 5).unwrap(), g);
        }
    }

    #[test]
    fn smooth_grad_is_seeded_and_matches_single_gradients() {
        let net = Network::builder(&[4]).dense(6, Activation::Relu).dense(2, Activation::None).build(2).unwrap();
        let x = Tensor::new(&[4], vec![0.1, 0.7, 0.3, 0.9]).unwrap();
        let a = smooth_grad(&net, &x, 1, 9, 0.2, 42).unwrap();
        assert_eq!(a, smooth_grad(&net, &x, 1, 9, 0.2, 42).unwrap());
        assert_ne!(a, smooth_grad(&net, &x, 1, 9, 0.2, 43).unwrap());
        // Same noise draws, per-sample gradients averaged by hand.
        let normal = Normal::new(0.0, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut mean = Tensor::zeros(&[4]);
        for _ in 0..9 {
            let xn = Tensor::from_fn(x.shape(), |i| x.data()[i] + normal.sample(&mut rng));
            mean = mean.add(&net.grad_input(&xn, 1).unwrap()).unwrap();
        }
        assert!(mean.scale(1.0 / 9.0).sub(&a).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn bad_parameters() {
        let net = linear_net();
        let x = Tensor::zeros(&[3]);
        assert!(smooth_grad(&net, &x, 0, 0, 0.1, 0).is_err());
        assert!(smooth_grad(&net, &x, 0, 3, -0.1, 0).is_err());
        assert!(gradient_saliency(&net, &x, 2).is_err());
    }

    #[test]
    fn default_sigma_follows_the_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_fn(&[10], |_| rng.random_range(0.0..1.0));
        let (lo, hi) = (x.data().iter().cloned().fold(1.0, f64::min), x.data().iter().cloned().fold(0.0, f64::max));
        assert_eq!(default_sigma(&x), 0.15 * (hi - lo));
    }
}
