//! Inverse-network file: little-endian, `"MIPI"`, u32 version, u32 target
//! class, the config snapshot, the 32-byte model hash, u32 fitting-sample
//! count, u32 layer count, then per layer a u8 kind, a u8 mask flag, the
//! parameters of that kind and the fit diagnostics.

use std::fs;
use std::path::Path;

use super::{FitSubset, InverseConfig, InverseLayer, InverseNetwork, KernelInit, LayerFit};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::net::LayerKind;

const MAGIC: &[u8; 4] = b"MIPI";
const VERSION: u32 = 1;

fn write_config(w: &mut Writer, c: &InverseConfig) {
    w.f64(c.lambda);
    w.u32(c.epochs as u32);
    w.f64(c.lr);
    w.f64(c.momentum);
    w.u8(match c.fit_subset {
        FitSubset::Class => 0,
        FitSubset::All => 1,
    });
    match c.kernel_init {
        KernelInit::ForwardCopy => {
            w.u8(0);
            w.u64(0);
        }
        KernelInit::Random(seed) => {
            w.u8(1);
            w.u64(seed);
        }
    }
    for flag in [c.rescale_init, c.mask_input, c.positive_only, c.unit_init] {
        w.u8(flag as u8);
    }
}

fn flag(r: &mut Reader) -> Result<bool> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::format(format!("bad flag byte {v}"))),
    }
}

fn read_config(r: &mut Reader) -> Result<InverseConfig> {
    let lambda = r.f64()?;
    let epochs = r.u32()? as usize;
    let lr = r.f64()?;
    let momentum = r.f64()?;
    let fit_subset = match r.u8()? {
        0 => FitSubset::Class,
        1 => FitSubset::All,
        v => return Err(Error::format(format!("bad fit subset {v}"))),
    };
    let tag = r.u8()?;
    let seed = r.u64()?;
    let kernel_init = match tag {
        0 => KernelInit::ForwardCopy,
        1 => KernelInit::Random(seed),
        v => return Err(Error::format(format!("bad kernel init {v}"))),
    };
    Ok(InverseConfig {
        lambda,
        epochs,
        lr,
        momentum,
        fit_subset,
        kernel_init,
        rescale_init: flag(r)?,
        mask_input: flag(r)?,
        positive_only: flag(r)?,
        unit_init: flag(r)?,
    })
}

fn kind_code(k: LayerKind) -> u8 {
    match k {
        LayerKind::Dense => 0,
        LayerKind::Conv2d => 1,
        LayerKind::MaxPool2d => 2,
        LayerKind::Flatten => 3,
    }
}

pub(crate) fn encode(inv: &InverseNetwork) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(inv.target_class as u32);
    write_config(&mut w, &inv.config);
    w.bytes(&inv.model_hash);
    w.u32(inv.fit_samples as u32);
    w.u32(inv.layers.len() as u32);
    for ((g, &mask), d) in inv.layers.iter().zip(&inv.masks).zip(&inv.diagnostics) {
        w.u8(kind_code(g.kind()));
        w.u8(mask as u8);
        match g {
            InverseLayer::Dense {
                weight,
                bias,
                out_shape,
            } => {
                w.tensor(weight);
                w.tensor(bias);
                w.extents(out_shape);
            }
            InverseLayer::Conv { kernel } => w.tensor(kernel),
            InverseLayer::Unpool => {}
            InverseLayer::Flatten { target_shape } => w.extents(target_shape),
        }
        w.f64(d.mse);
        w.u32(d.epoch_mse.len() as u32);
        w.f64s(&d.epoch_mse);
    }
    w.into_bytes()
}

pub(crate) fn decode(bytes: &[u8]) -> Result<InverseNetwork> {
    let mut r = Reader::new(bytes, "inverse-network file");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let target_class = r.u32()? as usize;
    let config = read_config(&mut r)?;
    let model_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let fit_samples = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut layers = Vec::new();
    let mut masks = Vec::new();
    let mut diagnostics = Vec::new();
    for layer in 0..count {
        let code = r.u8()?;
        masks.push(flag(&mut r)?);
        let (g, kind) = match code {
            0 => (
                InverseLayer::Dense {
                    weight: r.tensor()?,
                    bias: r.tensor()?,
                    out_shape: r.extents()?,
                },
                LayerKind::Dense,
            ),
            1 => (InverseLayer::Conv { kernel: r.tensor()? }, LayerKind::Conv2d),
            2 => (InverseLayer::Unpool, LayerKind::MaxPool2d),
            3 => (
                InverseLayer::Flatten {
                    target_shape: r.extents()?,
                },
                LayerKind::Flatten,
            ),
            v => return Err(Error::format(format!("unknown inverse layer kind {v}"))),
        };
        let mse = r.f64()?;
        let n = r.u32()? as usize;
        let epoch_mse = r.f64s(n)?;
        layers.push(g);
        diagnostics.push(LayerFit {
            layer,
            kind,
            mse,
            epoch_mse,
        });
    }
    r.finish()?;
    Ok(InverseNetwork {
        target_class,
        layers,
        masks,
        diagnostics,
        config,
        model_hash,
        fit_samples,
    })
}

pub fn save_inverse(inv: &InverseNetwork, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(inv))?;
    Ok(())
}

pub fn load_inverse(path: impl AsRef<Path>) -> Result<InverseNetwork> {
    decode(&fs::read(path)?)
}
