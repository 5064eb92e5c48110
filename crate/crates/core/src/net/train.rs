use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backprop::{backward_batch, forward_batch, Dropout};
use super::Network;
use crate::data::LabeledSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Dropout rate after hidden dense layers; training only.
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            epochs: 10,
            batch: 64,
            seed: 0,
            dropout: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Mini-batch SGD with momentum on softmax cross-entropy over the logits.
/// Deterministic for a fixed `cfg.seed`.
pub fn train_sgd(
    net: &Network,
    data: &LabeledSet,
    cfg: &TrainConfig,
    heldout: Option<&LabeledSet>,
) -> Result<(Network, TrainReport)> {
    if data.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if cfg.batch == 0 {
        return Err(Error::input("batch size must be positive"));
    }
    let classes = net.class_count();
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::input(format!("label {bad} outside 0..{classes}")));
    }
    let in_numel: usize = net.input_shape().iter().product();
    if data.sample_numel() != in_numel {
        return Err(Error::dim(format!(
            "dataset samples have shape {:?}, network expects {:?}",
            data.sample_shape(),
            net.input_shape()
        )));
    }

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Vec<Vec<f64>>> = net
        .layers()
        .iter()
        .map(|l| l.params().iter().map(|p| vec![0.0; p.numel()]).collect())
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let mut xs = Vec::with_capacity(b * in_numel);
            for &i in chunk {
                xs.extend_from_slice(data.sample_data(i));
            }
            let pass = forward_batch(
                &net,
                &xs,
                b,
                Some(Dropout {
                    rate: cfg.dropout,
                    rng: &mut rng,
                }),
            );
            let mut dlogits = vec![0.0; b * classes];
            for (s, &i) in chunk.iter().enumerate() {
                let z = &pass.logits[s * classes..(s + 1) * classes];
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                let y = data.label(i);
                loss_sum += lse - z[y];
                for j in 0..classes {
                    let p = (z[j] - lse).exp();
                    dlogits[s * classes + j] = (p - if j == y { 1.0 } else { 0.0 }) / b as f64;
                }
            }
            let grads = backward_batch(&net, pass, dlogits, false);
            for ((layer, lg), lv) in net
                .layers_mut()
                .iter_mut()
                .zip(&grads.params)
                .zip(&mut velocity)
            {
                for ((p, g), v) in layer.params_mut().into_iter().zip(lg).zip(lv) {
                    let data = p.data_mut();
                    for ((w, g), v) in data.iter_mut().zip(g).zip(v.iter_mut()) {
                        *v = cfg.momentum * *v - cfg.lr * g;
                        *w += *v;
                    }
                }
            }
        }
        let train_loss = loss_sum / data.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::input(format!("training diverged at epoch {epoch}")));
        }
        let heldout_accuracy = heldout.map(|h| accuracy(&net, h)).transpose()?;
        log::info!(
            "epoch {epoch}: loss {train_loss:.4}{}",
            heldout_accuracy
                .map(|a| format!(", held-out accuracy {:.2}%", a * 100.0))
                .unwrap_or_default()
        );
        report.epochs.push(EpochStats {
            epoch,
            train_loss,
            heldout_accuracy,
        });
    }
    Ok((net, report))
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn accuracy(net: &Network, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::input("accuracy of an empty set"));
    }
    let mut correct = 0;
    for i in 0..set.len() {
        if net.predict(&set.sample(i))? == set.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Architecture};
    use crate::tensor::Tensor;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { [0.25, 0.25] } else { [0.75, 0.75] };
            for m in centre {
                let v: f64 = m + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
            labels.push(c);
        }
        LabeledSet::new(Tensor::new(&[n, 2, 1, 1], data).unwrap(), labels).unwrap()
    }

    fn toy_net(seed: u64) -> Network {
        Network::builder(&[2, 1, 1])
            .dense(8, Activation::Relu)
            .dense(2, Activation::Softmax)
            .build(seed)
            .unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let net = toy_net(1);
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let (trained, report) = train_sgd(&net, &blobs(40, 1), &cfg, None).unwrap();
        assert_eq!(trained, net);
        assert_eq!(report.epochs.len(), 3);
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let data = blobs(200, 2);
        let cfg = TrainConfig {
            epochs: 50,
            batch: 16,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let (trained, report) = train_sgd(&toy_net(3), &data, &cfg, Some(&data)).unwrap();
        assert_eq!(accuracy(&trained, &data).unwrap(), 1.0);
        assert_eq!(report.epochs.last().unwrap().heldout_accuracy, Some(1.0));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = blobs(64, 4);
        let cfg = TrainConfig {
            epochs: 2,
            batch: 8,
            ..TrainConfig::default()
        };
        let net = Network::architecture(Architecture::CnnShapes, 0);
        let imgs = Tensor::from_fn(&[8, 1, 32, 32], |i| ((i * 13) % 29) as f64 / 29.0);
        let shapes = LabeledSet::new(imgs, (0..8).map(|i| i % 3).collect()).unwrap();
        let a = train_sgd(&net, &shapes, &cfg, None).unwrap();
        let b = train_sgd(&net, &shapes, &cfg, None).unwrap();
        assert_eq!(a, b);
        let a = train_sgd(&toy_net(0), &data, &cfg, None).unwrap();
        let b = train_sgd(&toy_net(0), &data, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs() {
        let data = blobs(10, 0);
        let net = toy_net(0);
        let cfg = TrainConfig::default();
        let three = Network::builder(&[2, 1, 1]).dense(1, Activation::None).build(0).unwrap();
        assert!(train_sgd(&three, &data, &cfg, None).is_err());
        let zero_batch = TrainConfig { batch: 0, ..cfg.clone() };
        assert!(train_sgd(&net, &data, &zero_batch, None).is_err());
        let wide = LabeledSet::new(Tensor::zeros(&[1, 3, 1, 1]), vec![0]).unwrap();
        assert!(matches!(train_sgd(&net, &wide, &cfg, None), Err(Error::Dimension(_))));
    }
}
