//! Model file: little-endian, `"MIPN"`, u32 version, u32 layer count, the
//! input extents (u32 rank + u32 extents), then per layer a u8 kind, a u8
//! activation, the weight extents (rank 0 for parameter-free layers), the
//! raw weights and the raw biases (one per output unit or channel).

use std::fs;
use std::path::Path;

use super::{Activation, Layer, Network};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MIPN";
const VERSION: u32 = 1;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::None => 0,
        Activation::Relu => 1,
        Activation::Softmax => 2,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::None),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Softmax),
        c => Err(Error::format(format!("unknown activation code {c}"))),
    }
}

pub(crate) fn encode(net: &Network) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(net.layers().len() as u32);
    w.extents(net.input_shape());
    for layer in net.layers() {
        let kind = match layer {
            Layer::Dense { .. } => 0,
            Layer::Conv2d { .. } => 1,
            Layer::MaxPool2d => 2,
            Layer::Flatten => 3,
        };
        w.u8(kind);
        w.u8(activation_code(layer.activation()));
        match layer {
            Layer::Dense { weight, bias, .. }
            | Layer::Conv2d {
                kernel: weight,
                bias,
                ..
            } => {
                w.extents(weight.shape());
                w.f64s(weight.data());
                w.f64s(bias.data());
            }
            _ => w.extents(&[]),
        }
    }
    w.into_bytes()
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes, "model file");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.u32()? as usize;
    let input_shape = r.extents()?;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let kind = r.u8()?;
        let activation = activation_from(r.u8()?)?;
        let shape = r.extents()?;
        let mut params = || -> Result<(Tensor, Tensor)> {
            let n: usize = shape.iter().product();
            if shape.is_empty() || n == 0 {
                return Err(Error::format("parameterised layer without weight extents"));
            }
            let weight = Tensor::new(&shape, r.f64s(n)?)
                .map_err(|e| Error::format(e.to_string()))?;
            let bias = Tensor::new(&[shape[0]], r.f64s(shape[0])?)
                .map_err(|e| Error::format(e.to_string()))?;
            Ok((weight, bias))
        };
        let layer = match kind {
            0 => {
                let (weight, bias) = params()?;
                Layer::Dense {
                    weight,
                    bias,
                    activation,
                }
            }
            1 => {
                let (kernel, bias) = params()?;
                Layer::Conv2d {
                    kernel,
                    bias,
                    activation,
                }
            }
            2 | 3 => {
                if !shape.is_empty() {
                    return Err(Error::format("parameter-free layer with weight extents"));
                }
                if kind == 2 {
                    Layer::MaxPool2d
                } else {
                    Layer::Flatten
                }
            }
            k => return Err(Error::format(format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    r.finish()?;
    Network::new(input_shape, layers).map_err(|e| Error::format(format!("model file: {e}")))
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(net))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    decode(&fs::read(path)?)
}
