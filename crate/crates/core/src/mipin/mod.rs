//! Layer-wise inverse networks and the attribution recursion.
//!
//! An [`InverseNetwork`] holds one inverse `g_{k+1}` per forward layer `k`,
//! mapping the signal at the layer's output back onto its input `X_k`.
//! Starting from the target logit, [`invert`] walks the inverses top-down,
//! masking with the forward relu pattern of the sample, and returns the
//! source signal together with the attribution obtained from the linear
//! part of every inverse.

mod fit;
mod io;
mod records;

pub use fit::{
    conv_inverse_objective, fit_conv_inverse, fit_dense_inverse, fit_inverse_network,
    rescale_kernel, ConvFit,
};
pub use io::{load_inverse, save_inverse};
pub use records::{load_attributions, save_attributions, AttributionFile, AttributionRecord};

use crate::error::{Error, Result};
use crate::net::{Activation, ForwardTrace, LayerKind, Network};
use crate::tensor::{conv2d_transpose, unpool2d, SwitchMask, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitSubset {
    /// Only samples labelled with the target class.
    Class,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelInit {
    /// Start from the forward layer's own kernel.
    ForwardCopy,
    /// Glorot-uniform kernel from the given seed.
    Random(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InverseConfig {
    /// Ridge coefficient of the dense closed form.
    pub lambda: f64,
    /// Full-batch epochs for convolutional inverses.
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub fit_subset: FitSubset,
    pub kernel_init: KernelInit,
    /// Scale the initial kernel by the least-squares optimal scalar before
    /// gradient descent.
    pub rescale_init: bool,
    /// Also mask the source signal with the input's non-zero pattern.
    pub mask_input: bool,
    /// Clamp the final attribution at zero.
    pub positive_only: bool,
    /// Start the attribution recursion from 1 instead of the target logit.
    pub unit_init: bool,
}

impl Default for InverseConfig {
    fn default() -> Self {
        InverseConfig {
            lambda: 0.001,
            epochs: 20,
            lr: 0.01,
            momentum: 0.9,
            fit_subset: FitSubset::Class,
            kernel_init: KernelInit::ForwardCopy,
            rescale_init: true,
            mask_input: false,
            positive_only: false,
            unit_init: false,
        }
    }
}

impl InverseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::input(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input("learning rate must be >= 0 and momentum in [0, 1)"));
        }
        Ok(())
    }
}

/// Inverse of one forward layer.
#[derive(Clone, Debug, PartialEq)]
pub enum InverseLayer {
    /// `x = W s + b` with `weight: [d_in, d_out]`; the result is reshaped to `out_shape`.
    Dense {
        weight: Tensor,
        bias: Tensor,
        out_shape: Vec<usize>,
    },
    /// Transposed convolution with `kernel: [C_out, C_in, kH, kW]`, no bias.
    Conv { kernel: Tensor },
    /// Switch unpooling; the switches come from the sample's trace.
    Unpool,
    Flatten { target_shape: Vec<usize> },
}

impl InverseLayer {
    pub fn kind(&self) -> LayerKind {
        match self {
            InverseLayer::Dense { .. } => LayerKind::Dense,
            InverseLayer::Conv { .. } => LayerKind::Conv2d,
            InverseLayer::Unpool => LayerKind::MaxPool2d,
            InverseLayer::Flatten { .. } => LayerKind::Flatten,
        }
    }

    /// `g(v)`, including the dense bias.
    pub fn apply(&self, v: &Tensor, switches: Option<&SwitchMask>) -> Result<Tensor> {
        let lin = self.apply_linear_part(v, switches)?;
        match self {
            InverseLayer::Dense { bias, .. } => {
                let mut out = lin;
                out.data_mut().iter_mut().zip(bias.data()).for_each(|(o, b)| *o += b);
                Ok(out)
            }
            _ => Ok(lin),
        }
    }

    /// `g(v) - g(0)`: the dense weight, the transposed convolution, switch
    /// unpooling or a reshape.
    pub fn apply_linear_part(&self, v: &Tensor, switches: Option<&SwitchMask>) -> Result<Tensor> {
        match self {
            InverseLayer::Dense {
                weight, out_shape, ..
            } => {
                let (rows, cols) = weight.dims2()?;
                if v.numel() != cols {
                    return Err(Error::dim(format!(
                        "dense inverse takes {cols} values, got {:?}",
                        v.shape()
                    )));
                }
                let w = weight.data();
                let out = (0..rows)
                    .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v.data()).map(|(a, b)| a * b).sum())
                    .collect();
                Ok(Tensor::from_parts(out_shape.clone(), out))
            }
            InverseLayer::Conv { kernel } => conv2d_transpose(v, kernel),
            InverseLayer::Unpool => {
                let sw = switches.ok_or_else(|| Error::input("unpooling needs the sample's switches"))?;
                unpool2d(v, sw)
            }
            InverseLayer::Flatten { target_shape } => v.reshape(target_shape),
        }
    }
}

/// Fit diagnostics of one inverse layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerFit {
    pub layer: usize,
    pub kind: LayerKind,
    /// Mean squared reconstruction error of `X_k` over the fitting subset,
    /// before masking.
    pub mse: f64,
    /// Convolutional inverses only: the MSE before the first epoch and after every epoch.
    pub epoch_mse: Vec<f64>,
}

/// Per-class stack of layer inverses. `layers[k]` inverts forward layer `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseNetwork {
    pub target_class: usize,
    pub layers: Vec<InverseLayer>,
    /// `masks[k]`: whether the signal reconstructing `X_k` is masked with `X_k != 0`.
    pub masks: Vec<bool>,
    pub diagnostics: Vec<LayerFit>,
    pub config: InverseConfig,
    pub model_hash: [u8; 32],
    pub fit_samples: usize,
}

impl InverseNetwork {
    fn check(&self, net: &Network, trace: &ForwardTrace) -> Result<()> {
        if net.content_hash() != self.model_hash {
            return Err(Error::Stale(format!(
                "inverse network for class {} was fitted on a different model; re-run `mipin fit`",
                self.target_class
            )));
        }
        let shapes = net.activation_shapes();
        let ok = trace.activations.len() == self.layers.len()
            && trace.switches.len() == self.layers.len()
            && trace.activations.iter().zip(&shapes).all(|(a, s)| a.shape() == s.as_slice());
        if !ok {
            return Err(Error::Stale("trace does not match the inverse network's model".into()));
        }
        Ok(())
    }
}

/// Which `X_k` get relu-masked: outputs of relu layers, plus the input if requested.
pub(crate) fn relu_masks(net: &Network, mask_input: bool) -> Vec<bool> {
    let layers = net.layers();
    (0..layers.len())
        .map(|k| {
            if k == 0 {
                mask_input
            } else {
                layers[k - 1].activation() == Activation::Relu
            }
        })
        .collect()
}

/// Zeroes `v` wherever `reference` is zero.
pub fn forward_relu_mask(v: &Tensor, reference: &Tensor) -> Result<Tensor> {
    if v.shape() != reference.shape() {
        return Err(Error::dim(format!(
            "mask {:?} against signal {:?}",
            reference.shape(),
            v.shape()
        )));
    }
    Ok(Tensor::from_parts(
        v.shape().to_vec(),
        v.data()
            .iter()
            .zip(reference.data())
            .map(|(&s, &x)| if x != 0.0 { s } else { 0.0 })
            .collect(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionResult {
    /// `S_0`, in input shape.
    pub source_signal: Tensor,
    pub attribution: Tensor,
    pub target_class: usize,
    /// `Φ(x)_c` from the trace.
    pub logit_x: f64,
    /// `Φ(S_0)_c` from a fresh forward pass.
    pub logit_s: f64,
}

/// Runs the inverse recursion for one traced sample.
pub fn invert(inv: &InverseNetwork, net: &Network, trace: &ForwardTrace) -> Result<AttributionResult> {
    inv.check(net, trace)?;
    let c = inv.target_class;
    let y = trace.logit(c);
    let mut s = Tensor::scalar(y);
    let mut a = Tensor::scalar(if inv.config.unit_init { 1.0 } else { y });
    for k in (0..inv.layers.len()).rev() {
        let g = &inv.layers[k];
        let sw = trace.switches[k].as_ref();
        s = g.apply(&s, sw)?;
        a = g.apply_linear_part(&a, sw)?;
        if inv.masks[k] {
            let x = &trace.activations[k];
            s = forward_relu_mask(&s, x)?;
            a = forward_relu_mask(&a, x)?;
        }
    }
    if inv.config.positive_only {
        a = a.relu();
    }
    let logit_s = net.forward(&s)?.data()[c];
    Ok(AttributionResult {
        source_signal: s,
        attribution: a,
        target_class: c,
        logit_x: y,
        logit_s,
    })
}

/// `x - S_0`.
pub fn distractor(x: &Tensor, result: &AttributionResult) -> Result<Tensor> {
    x.sub(&result.source_signal)
}
