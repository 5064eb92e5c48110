//! Feed-forward classifiers: layer definitions, traced forward passes,
//! input gradients and SGD training.

mod backprop;
mod io;
mod train;

pub use io::{load_model, save_model};
pub use train::{accuracy, train_sgd, EpochStats, TrainConfig, TrainReport};

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, maxpool2d, SwitchMask, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    None,
    Relu,
    /// Marks the classifier output. Forward passes still return logits;
    /// probabilities come from [`Network::probabilities`].
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv2d,
    MaxPool2d,
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `weight: [out, in]`, `bias: [out]`. The input is read as a flat vector.
    Dense {
        weight: Tensor,
        bias: Tensor,
        activation: Activation,
    },
    /// `kernel: [C_out, C_in, kH, kW]`, `bias: [C_out]`; valid padding, stride 1.
    Conv2d {
        kernel: Tensor,
        bias: Tensor,
        activation: Activation,
    },
    MaxPool2d,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::MaxPool2d => LayerKind::MaxPool2d,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense { activation, .. } | Layer::Conv2d { activation, .. } => *activation,
            _ => Activation::None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let numel: usize = input.iter().product();
        match self {
            Layer::Dense { weight, bias, .. } => {
                let (out, inp) = weight.dims2()?;
                if inp != numel {
                    return Err(Error::dim(format!(
                        "dense layer expects {inp} inputs, got shape {input:?}"
                    )));
                }
                if bias.shape() != [out] {
                    return Err(Error::dim(format!("dense bias {:?} for {out} outputs", bias.shape())));
                }
                Ok(vec![out])
            }
            Layer::Conv2d { kernel, bias, .. } => {
                let (co, ci, kh, kw) = match kernel.shape()[..] {
                    [a, b, c, d] => (a, b, c, d),
                    _ => return Err(Error::dim(format!("conv kernel {:?}", kernel.shape()))),
                };
                match input[..] {
                    [c, h, w] if c == ci && kh <= h && kw <= w => {
                        if bias.shape() != [co] {
                            return Err(Error::dim(format!("conv bias {:?} for {co} channels", bias.shape())));
                        }
                        Ok(vec![co, h - kh + 1, w - kw + 1])
                    }
                    _ => Err(Error::dim(format!(
                        "conv kernel {:?} cannot take input {input:?}",
                        kernel.shape()
                    ))),
                }
            }
            Layer::MaxPool2d => match input[..] {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(Error::dim(format!("max pooling cannot take input {input:?}"))),
            },
            Layer::Flatten => Ok(vec![numel]),
        }
    }

    /// Post-activation output (pre-softmax for the classifier layer) plus
    /// the pooling switches when this is a pooling layer.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Option<SwitchMask>)> {
        match self {
            Layer::Dense {
                weight,
                bias,
                activation,
            } => {
                let (out, inp) = weight.dims2()?;
                if x.numel() != inp {
                    return Err(Error::dim(format!(
                        "dense layer expects {inp} inputs, got {:?}",
                        x.shape()
                    )));
                }
                let w = weight.data();
                let xv = x.data();
                let y = (0..out)
                    .map(|o| {
                        let row = &w[o * inp..(o + 1) * inp];
                        let z = bias.data()[o] + row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
                        apply_activation(*activation, z)
                    })
                    .collect();
                Ok((Tensor::from_parts(vec![out], y), None))
            }
            Layer::Conv2d {
                kernel,
                bias,
                activation,
            } => {
                let z = conv2d(x, kernel)?;
                let plane = z.shape()[1] * z.shape()[2];
                let mut data = z.into_data();
                for (c, chunk) in data.chunks_mut(plane).enumerate() {
                    let b = bias.data()[c];
                    chunk
                        .iter_mut()
                        .for_each(|v| *v = apply_activation(*activation, *v + b));
                }
                let shape = self.output_shape(x.shape())?;
                Ok((Tensor::from_parts(shape, data), None))
            }
            Layer::MaxPool2d => {
                let (p, sw) = maxpool2d(x)?;
                Ok((p, Some(sw)))
            }
            Layer::Flatten => Ok((x.reshape(&[x.numel()])?, None)),
        }
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight, bias],
            Layer::Conv2d { kernel, bias, .. } => vec![kernel, bias],
            _ => vec![],
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight, bias],
            Layer::Conv2d { kernel, bias, .. } => vec![kernel, bias],
            _ => vec![],
        }
    }
}

#[inline]
fn apply_activation(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::None | Activation::Softmax => z,
    }
}

/// Per-sample record of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `X_0 .. X_{L-1}`: the input followed by every hidden post-activation.
    pub activations: Vec<Tensor>,
    /// Pre-softmax outputs of the last layer.
    pub logits: Tensor,
    /// `switches[k]` holds the argmax switches of layer `k` if it pools.
    pub switches: Vec<Option<SwitchMask>>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn logit(&self, class: usize) -> f64 {
        self.logits.data()[class]
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    hash: OnceLock<[u8; 32]>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

impl Network {
    /// Validates that the layer shapes chain from `input_shape`, that only
    /// the last layer may carry softmax, and that the last layer is dense.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::input("network needs at least one layer"));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::dim(format!("bad input shape {input_shape:?}")));
        }
        let mut shape = input_shape.clone();
        for (k, layer) in layers.iter().enumerate() {
            if layer.activation() == Activation::Softmax && k + 1 != layers.len() {
                return Err(Error::input(format!("softmax on hidden layer {k}")));
            }
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::dim(format!("layer {k}: {e}")))?;
        }
        if layers.last().unwrap().kind() != LayerKind::Dense {
            return Err(Error::input("the classifier layer must be dense"));
        }
        Ok(Network {
            input_shape,
            layers,
            hash: OnceLock::new(),
        })
    }

    pub fn builder(input_shape: &[usize]) -> NetworkBuilder {
        NetworkBuilder {
            input_shape: input_shape.to_vec(),
            specs: Vec::new(),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        self.hash = OnceLock::new();
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        match &self.layers[self.layers.len() - 1] {
            Layer::Dense { bias, .. } => bias.numel(),
            _ => unreachable!("validated in Network::new"),
        }
    }

    /// Shapes of `X_0 .. X_L`, the last one being the logits.
    pub fn activation_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap()).expect("validated");
            shapes.push(next);
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|t| t.numel())
            .sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::dim(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Pre-softmax logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?.0;
        }
        Ok(cur)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut switches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, sw) = layer.forward(&cur)?;
            activations.push(cur);
            switches.push(sw);
            cur = next;
        }
        let trace = ForwardTrace {
            activations,
            logits: cur.clone(),
            switches,
        };
        Ok((cur, trace))
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax(&self.forward(x)?))
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    /// Gradient of logit `class` with respect to the input.
    pub fn grad_input(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        self.check_input(x)?;
        if class >= self.class_count() {
            return Err(Error::input(format!(
                "class {class} out of range for {} classes",
                self.class_count()
            )));
        }
        backprop::input_gradient(self, x, class)
    }

    /// Mean of the logit-`class` input gradients over `xs`, each shaped like the input.
    pub fn mean_grad_input(&self, xs: &[Tensor], class: usize) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(Error::input("mean gradient over zero inputs"));
        }
        for x in xs {
            self.check_input(x)?;
        }
        if class >= self.class_count() {
            return Err(Error::input(format!(
                "class {class} out of range for {} classes",
                self.class_count()
            )));
        }
        let numel = xs[0].numel();
        let mut mean = vec![0.0; numel];
        for chunk in xs.chunks(16) {
            let flat: Vec<f64> = chunk.iter().flat_map(|x| x.data().iter().copied()).collect();
            let g = backprop::input_gradients(self, &flat, chunk.len(), class);
            for row in g.chunks(numel) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
        }
        let n = xs.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(Tensor::from_parts(self.input_shape.clone(), mean))
    }

    /// SHA-256 of the serialized model; identifies the model in downstream artifacts.
    pub fn content_hash(&self) -> [u8; 32] {
        *self.hash.get_or_init(|| crate::codec::sha256(&io::encode(self)))
    }

    pub fn architecture(arch: Architecture, seed: u64) -> Network {
        arch.builder().build(seed).expect("built-in architectures are consistent")
    }
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let m = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.data().iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Tensor::from_parts(logits.shape().to_vec(), e.into_iter().map(|v| v / s).collect())
}

#[derive(Clone, Copy, Debug)]
enum LayerSpec {
    Dense(usize, Activation),
    Conv(usize, usize, usize, Activation),
    Pool,
    Flatten,
}

/// Declarative network construction with seeded Glorot-uniform weights
/// (`±sqrt(6 / (fan_in + fan_out))`) and zero biases.
#[derive(Clone, Debug)]
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
}

impl NetworkBuilder {
    pub fn dense(mut self, out: usize, activation: Activation) -> Self {
        self.specs.push(LayerSpec::Dense(out, activation));
        self
    }

    pub fn conv(mut self, c_out: usize, kh: usize, kw: usize, activation: Activation) -> Self {
        self.specs.push(LayerSpec::Conv(c_out, kh, kw, activation));
        self
    }

    pub fn max_pool(mut self) -> Self {
        self.specs.push(LayerSpec::Pool);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.specs.push(LayerSpec::Flatten);
        self
    }

    pub fn build(self, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.specs.len());
        for spec in self.specs {
            let layer = match spec {
                LayerSpec::Dense(out, activation) => {
                    let inp: usize = shape.iter().product();
                    Layer::Dense {
                        weight: glorot(&mut rng, &[out, inp], inp, out),
                        bias: Tensor::zeros(&[out]),
                        activation,
                    }
                }
                LayerSpec::Conv(co, kh, kw, activation) => {
                    let ci = *shape.first().unwrap_or(&1);
                    Layer::Conv2d {
                        kernel: glorot(&mut rng, &[co, ci, kh, kw], ci * kh * kw, co * kh * kw),
                        bias: Tensor::zeros(&[co]),
                        activation,
                    }
                }
                LayerSpec::Pool => Layer::MaxPool2d,
                LayerSpec::Flatten => Layer::Flatten,
            };
            shape = layer.output_shape(&shape)?;
            layers.push(layer);
        }
        Network::new(self.input_shape, layers)
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// The classifier architectures used throughout the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// 784-512-512-10 perceptron on 28x28 digits.
    MlpM,
    /// conv16@5x5, conv64@3x3, pool, dense512, dense10 on 28x28 digits.
    CnnM,
    /// conv32, conv64, pool, conv64, pool, dense512, dense10 on 32x32x3 images.
    CnnC,
    /// CNN-M layers on 32x32 single-channel input with three classes, for
    /// the synthetic shapes.
    CnnShapes,
}

impl Architecture {
    pub fn builder(self) -> NetworkBuilder {
        use Activation::{Relu, Softmax};
        match self {
            Architecture::MlpM => Network::builder(&[1, 28, 28])
                .dense(512, Relu)
                .dense(512, Relu)
                .dense(10, Softmax),
            Architecture::CnnM => Network::builder(&[1, 28, 28])
                .conv(16, 5, 5, Relu)
                .conv(64, 3, 3, Relu)
                .max_pool()
                .flatten()
                .dense(512, Relu)
                .dense(10, Softmax),
            Architecture::CnnC => Network::builder(&[3, 32, 32])
                .conv(32, 3, 3, Relu)
                .conv(64, 3, 3, Relu)
                .max_pool()
                .conv(64, 3, 3, Relu)
                .max_pool()
                .flatten()
                .dense(512, Relu)
                .dense(10, Softmax),
            Architecture::CnnShapes => Network::builder(&[1, 32, 32])
                .conv(16, 5, 5, Relu)
                .conv(64, 3, 3, Relu)
                .max_pool()
                .flatten()
                .dense(512, Relu)
                .dense(3, Softmax),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp-m" => Ok(Architecture::MlpM),
            "cnn-m" => Ok(Architecture::CnnM),
            "cnn-c" => Ok(Architecture::CnnC),
            "cnn-shapes" => Ok(Architecture::CnnShapes),
            other => Err(Error::Usage(format!(
                "unknown architecture {other:?} (expected mlp-m, cnn-m, cnn-c or cnn-shapes)"
            ))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::MlpM => "mlp-m",
            Architecture::CnnM => "cnn-m",
            Architecture::CnnC => "cnn-c",
            Architecture::CnnShapes => "cnn-shapes",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net(n: usize) -> Network {
        Network::new(
            vec![n],
            vec![Layer::Dense {
                weight: Tensor::eye(n),
                bias: Tensor::zeros(&[n]),
                activation: Activation::None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut net = Network::architecture(Architecture::MlpM, 1);
        for l in net.layers_mut() {
            for p in l.params_mut() {
                *p = Tensor::zeros(p.shape());
            }
        }
        let x = Tensor::full(&[1, 28, 28], 0.7);
        assert_eq!(net.forward(&x).unwrap(), Tensor::zeros(&[10]));
    }

    #[test]
    fn identity_net_returns_input() {
        let net = identity_net(3);
        let x = Tensor::new(&[3], vec![1., -2., 3.]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
        let (logits, trace) = net.forward_traced(&x).unwrap();
        assert_eq!(logits, x);
        assert_eq!(trace.activations, vec![x.clone()]);
    }

    #[test]
    fn mlp_trace_has_three_dense_entries_plus_input() {
        let net = Network::architecture(Architecture::MlpM, 2);
        let x = Tensor::full(&[1, 28, 28], 0.1);
        let (logits, trace) = net.forward_traced(&x).unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.activations[1].shape(), &[512]);
        assert_eq!(logits.shape(), &[10]);
        assert_eq!(net.forward(&x).unwrap(), logits);
    }

    #[test]
    fn trace_steps_reproduce_next_activation() {
        let net = Network::architecture(Architecture::CnnM, 3);
        let x = Tensor::from_fn(&[1, 28, 28], |i| ((i * 37) % 101) as f64 / 101.0);
        let (logits, trace) = net.forward_traced(&x).unwrap();
        for k in 0..net.layers().len() {
            let (next, _) = net.layers()[k].forward(&trace.activations[k]).unwrap();
            let want = trace.activations.get(k + 1).unwrap_or(&logits);
            assert_eq!(&next, want);
        }
        assert!(trace.switches[2].is_some());
        assert!(trace.switches[0].is_none());
    }

    #[test]
    fn architecture_shapes_follow_the_tables() {
        let shapes = Network::architecture(Architecture::CnnM, 0).activation_shapes();
        assert_eq!(
            shapes,
            vec![
                vec![1, 28, 28],
                vec![16, 24, 24],
                vec![64, 22, 22],
                vec![64, 11, 11],
                vec![7744],
                vec![512],
                vec![10]
            ]
        );
        let shapes = Network::architecture(Architecture::CnnC, 0).activation_shapes();
        assert_eq!(shapes[5], vec![64, 6, 6]);
        assert_eq!(shapes[6], vec![2304]);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = identity_net(3);
        assert!(matches!(net.forward(&Tensor::zeros(&[4])), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_only_on_last_layer() {
        let bad = Network::builder(&[4])
            .dense(3, Activation::Softmax)
            .dense(2, Activation::None)
            .build(0);
        assert!(bad.is_err());
    }

    #[test]
    fn parses_architecture_names() {
        assert_eq!("mlp-m".parse::<Architecture>().unwrap(), Architecture::MlpM);
        assert!(matches!("bogus".parse::<Architecture>(), Err(Error::Usage(_))));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&Tensor::new(&[3], vec![1000.0, 1000.0, -5.0]).unwrap());
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!((p.data()[0] - 0.5).abs() < 1e-12);
    }
}

#[cfg(test)]
mod gradcheck_tests;
