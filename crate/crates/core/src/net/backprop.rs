//! Batched forward/backward passes used by training and input gradients.
//!
//! Activations for a batch of `B` samples are stored sample-major in flat
//! buffers. Dense layers run as one GEMM over the batch; convolutions run
//! per sample through im2col.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, Layer, Network};
use crate::error::Result;
use crate::tensor::conv::{col2im, im2col, ConvGeom};
use crate::tensor::{gemm, Tensor, Trans};

enum Cache {
    Dense {
        input: Vec<f64>,
        /// Post-activation, pre-dropout output.
        act: Vec<f64>,
        dropout: Option<Vec<f64>>,
    },
    Conv {
        geom: ConvGeom,
        cols: Vec<f64>,
        act: Vec<f64>,
    },
    Pool {
        in_numel: usize,
        argmax: Vec<usize>,
    },
    Flatten,
}

pub(crate) struct Pass {
    caches: Vec<Cache>,
    pub logits: Vec<f64>,
    pub batch: usize,
}

/// Inverted dropout applied after hidden dense layers during training.
pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn conv_geom(kernel: &Tensor, in_shape: &[usize]) -> ConvGeom {
    let k = kernel.shape();
    ConvGeom {
        c_in: k[1],
        c_out: k[0],
        h: in_shape[1],
        w: in_shape[2],
        kh: k[2],
        kw: k[3],
    }
}

pub(crate) fn forward_batch(
    net: &Network,
    xs: &[f64],
    batch: usize,
    mut dropout: Option<Dropout<'_>>,
) -> Pass {
    let shapes = net.activation_shapes();
    let last = net.layers().len() - 1;
    let mut cur = xs.to_vec();
    let mut caches = Vec::with_capacity(net.layers().len());
    for (k, layer) in net.layers().iter().enumerate() {
        let in_shape = &shapes[k];
        let in_numel: usize = in_shape.iter().product();
        let out_numel: usize = shapes[k + 1].iter().product();
        debug_assert_eq!(cur.len(), batch * in_numel);
        match layer {
            Layer::Dense {
                weight,
                bias,
                activation,
            } => {
                let mut out = vec![0.0; batch * out_numel];
                gemm(batch, in_numel, out_numel, 1.0, &cur, Trans::N, weight.data(), Trans::T, 0.0, &mut out);
                for row in out.chunks_mut(out_numel) {
                    row.iter_mut().zip(bias.data()).for_each(|(v, b)| *v += b);
                    if *activation == Activation::Relu {
                        row.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                }
                let mask = match dropout.as_mut() {
                    Some(d) if k != last && *activation == Activation::Relu && d.rate > 0.0 => {
                        let keep = 1.0 - d.rate;
                        let m: Vec<f64> = (0..out.len())
                            .map(|_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        Some(m)
                    }
                    _ => None,
                };
                let next = match &mask {
                    Some(m) => out.iter().zip(m).map(|(a, b)| a * b).collect(),
                    None => out.clone(),
                };
                caches.push(Cache::Dense {
                    input: std::mem::replace(&mut cur, next),
                    act: out,
                    dropout: mask,
                });
            }
            Layer::Conv2d {
                kernel,
                bias,
                activation,
            } => {
                let g = conv_geom(kernel, in_shape);
                let (patch, pos) = (g.patch(), g.positions());
                let mut cols = vec![0.0; batch * patch * pos];
                let mut out = vec![0.0; batch * out_numel];
                for s in 0..batch {
                    let c = &mut cols[s * patch * pos..(s + 1) * patch * pos];
                    im2col(&cur[s * in_numel..(s + 1) * in_numel], &g, c);
                    let o = &mut out[s * out_numel..(s + 1) * out_numel];
                    gemm(g.c_out, patch, pos, 1.0, kernel.data(), Trans::N, c, Trans::N, 0.0, o);
                    for (ch, plane) in o.chunks_mut(pos).enumerate() {
                        let b = bias.data()[ch];
                        plane.iter_mut().for_each(|v| {
                            *v += b;
                            if *activation == Activation::Relu {
                                *v = v.max(0.0);
                            }
                        });
                    }
                }
                cur = out.clone();
                caches.push(Cache::Conv {
                    geom: g,
                    cols,
                    act: out,
                });
            }
            Layer::MaxPool2d => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (ph, pw) = (h / 2, w / 2);
                let mut out = vec![0.0; batch * out_numel];
                let mut argmax = vec![0; batch * out_numel];
                for s in 0..batch {
                    let x = &cur[s * in_numel..(s + 1) * in_numel];
                    for ch in 0..c {
                        for py in 0..ph {
                            for px in 0..pw {
                                let base = ch * h * w + 2 * py * w + 2 * px;
                                let mut best = base;
                                for i in [base + 1, base + w, base + w + 1] {
                                    if x[i] > x[best] {
                                        best = i;
                                    }
                                }
                                let o = s * out_numel + (ch * ph + py) * pw + px;
                                out[o] = x[best];
                                argmax[o] = best;
                            }
                        }
                    }
                }
                cur = out;
                caches.push(Cache::Pool { in_numel, argmax });
            }
            Layer::Flatten => caches.push(Cache::Flatten),
        }
    }
    Pass {
        caches,
        logits: cur,
        batch,
    }
}

/// Parameter gradients (one flat buffer per parameter tensor, in
/// [`Layer::params`] order) and, if requested, the input gradient.
pub(crate) struct Grads {
    pub params: Vec<Vec<Vec<f64>>>,
    pub input: Option<Vec<f64>>,
}

pub(crate) fn backward_batch(net: &Network, pass: Pass, dlogits: Vec<f64>, want_input: bool) -> Grads {
    let shapes = net.activation_shapes();
    let batch = pass.batch;
    let mut grad = dlogits;
    let mut params: Vec<Vec<Vec<f64>>> = vec![Vec::new(); net.layers().len()];
    for (k, (layer, cache)) in net.layers().iter().zip(pass.caches).enumerate().rev() {
        let in_numel: usize = shapes[k].iter().product();
        let out_numel: usize = shapes[k + 1].iter().product();
        let need_dx = k > 0 || want_input;
        match (layer, cache) {
            (
                Layer::Dense { weight, activation, .. },
                Cache::Dense {
                    input,
                    act,
                    dropout,
                },
            ) => {
                if let Some(m) = &dropout {
                    grad.iter_mut().zip(m).for_each(|(g, m)| *g *= m);
                }
                if *activation == Activation::Relu {
                    grad.iter_mut().zip(&act).for_each(|(g, a)| {
                        if *a <= 0.0 {
                            *g = 0.0
                        }
                    });
                }
                let mut dw = vec![0.0; out_numel * in_numel];
                gemm(out_numel, batch, in_numel, 1.0, &grad, Trans::T, &input, Trans::N, 0.0, &mut dw);
                let mut db = vec![0.0; out_numel];
                for row in grad.chunks(out_numel) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                params[k] = vec![dw, db];
                if need_dx {
                    let mut dx = vec![0.0; batch * in_numel];
                    gemm(batch, out_numel, in_numel, 1.0, &grad, Trans::N, weight.data(), Trans::N, 0.0, &mut dx);
                    grad = dx;
                }
            }
            (Layer::Conv2d { kernel, activation, .. }, Cache::Conv { geom: g, cols, act }) => {
                if *activation == Activation::Relu {
                    grad.iter_mut().zip(&act).for_each(|(gr, a)| {
                        if *a <= 0.0 {
                            *gr = 0.0
                        }
                    });
                }
                let (patch, pos) = (g.patch(), g.positions());
                let mut dk = vec![0.0; g.c_out * patch];
                let mut db = vec![0.0; g.c_out];
                let mut dx = if need_dx { vec![0.0; batch * in_numel] } else { Vec::new() };
                let mut dcols = vec![0.0; patch * pos];
                for s in 0..batch {
                    let go = &grad[s * out_numel..(s + 1) * out_numel];
                    let c = &cols[s * patch * pos..(s + 1) * patch * pos];
                    gemm(g.c_out, pos, patch, 1.0, go, Trans::N, c, Trans::T, 1.0, &mut dk);
                    for (ch, plane) in go.chunks(pos).enumerate() {
                        db[ch] += plane.iter().sum::<f64>();
                    }
                    if need_dx {
                        gemm(patch, g.c_out, pos, 1.0, kernel.data(), Trans::T, go, Trans::N, 0.0, &mut dcols);
                        col2im(&dcols, &g, &mut dx[s * in_numel..(s + 1) * in_numel]);
                    }
                }
                params[k] = vec![dk, db];
                if need_dx {
                    grad = dx;
                }
            }
            (Layer::MaxPool2d, Cache::Pool { in_numel, argmax }) => {
                let mut dx = vec![0.0; batch * in_numel];
                for (o, (&i, g)) in argmax.iter().zip(&grad).enumerate() {
                    let s = o / out_numel;
                    dx[s * in_numel + i] += g;
                }
                grad = dx;
            }
            (Layer::Flatten, Cache::Flatten) => {}
            _ => unreachable!("cache kind follows layer kind"),
        }
    }
    Grads {
        params,
        input: want_input.then_some(grad),
    }
}

pub(crate) fn input_gradient(net: &Network, x: &Tensor, class: usize) -> Result<Tensor> {
    let g = input_gradients(net, x.data(), 1, class);
    Ok(Tensor::from_parts(x.shape().to_vec(), g))
}

/// Gradients of logit `class` for `batch` stacked inputs, sample-major.
pub(crate) fn input_gradients(net: &Network, xs: &[f64], batch: usize, class: usize) -> Vec<f64> {
    let pass = forward_batch(net, xs, batch, None);
    let classes = net.class_count();
    let mut d = vec![0.0; batch * classes];
    for s in 0..batch {
        d[s * classes + class] = 1.0;
    }
    backward_batch(net, pass, d, true)
        .input
        .expect("input gradient requested")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Architecture, Network};

    #[test]
    fn batched_logits_match_single_forward() {
        for arch in [Architecture::MlpM, Architecture::CnnShapes] {
            let net = Network::architecture(arch, 4);
            let shape = net.input_shape().to_vec();
            let xs: Vec<Tensor> = (0..3)
                .map(|s| Tensor::from_fn(&shape, |i| ((i * 7 + s * 13) % 17) as f64 / 17.0))
                .collect();
            let flat: Vec<f64> = xs.iter().flat_map(|t| t.data().to_vec()).collect();
            let pass = forward_batch(&net, &flat, 3, None);
            let c = net.class_count();
            for (s, x) in xs.iter().enumerate() {
                let single = net.forward(x).unwrap();
                for j in 0..c {
                    assert!((pass.logits[s * c + j] - single.data()[j]).abs() < 1e-10);
                }
            }
        }
    }
}
