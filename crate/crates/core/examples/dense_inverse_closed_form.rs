//! Fit a dense inverse layer in closed form and check it against a known
//! linear map.
//!
//! The signals `x = W s + b + noise` come from a fixed `W`, `b`; the ridge
//! fit should recover both, and the recovery should worsen as λ grows.

use mipin::mipin::{fit_dense_inverse, InverseLayer};
use mipin::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> mipin::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (dx, ds, n) = (6, 4, 200);
    let w_true = Tensor::from_fn(&[dx, ds], |_| rng.sample(StandardNormal));
    let b_true = Tensor::from_fn(&[dx], |i| i as f64 * 0.5);
    let s = Tensor::from_fn(&[ds, n], |_| rng.sample(StandardNormal));
    let x = Tensor::from_fn(&[dx, n], |i| {
        let (r, col) = (i / n, i % n);
        let clean: f64 = (0..ds).map(|k| w_true.get(&[r, k]) * s.get(&[k, col])).sum::<f64>() + b_true.get(&[r]);
        clean + 0.01 * rng.sample::<f64, _>(StandardNormal)
    });

    for lambda in [0.001, 1.0, 100.0] {
        let InverseLayer::Dense { weight, bias, .. } = fit_dense_inverse(&x, &s, lambda)? else {
            unreachable!()
        };
        println!(
            "λ = {lambda:<6} |W - W*| = {:.5}  |b - b*| = {:.5}",
            weight.sub(&w_true)?.norm(),
            bias.sub(&b_true)?.norm()
        );
    }
    Ok(())
}
