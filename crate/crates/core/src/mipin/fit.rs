use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::{Distribution, Uniform};

use super::{relu_masks, forward_relu_mask, FitSubset, InverseConfig, InverseLayer, InverseNetwork, KernelInit, LayerFit};
use crate::data::TraceStore;
use crate::error::{Error, Result};
use crate::net::{Layer, Network};
use crate::tensor::conv::{col2im, im2col, ConvGeom};
use crate::tensor::{gemm, solve_spd, unpool2d, Tensor, Trans};

/// Closed-form ridge inverse of a dense layer. `x: [d_l, N]` and
/// `s: [d_{l+1}, N]` hold one sample per column. Returns
/// `W = X̄S̄ᵀ(S̄S̄ᵀ + λI)⁻¹` and `b = mean(X) - W mean(S)` where the bars
/// denote centring over samples.
pub fn fit_dense_inverse(x: &Tensor, s: &Tensor, lambda: f64) -> Result<InverseLayer> {
    let (dx, n) = x.dims2()?;
    let (ds, ns) = s.dims2()?;
    if n != ns {
        return Err(Error::dim(format!("{n} input samples but {ns} signal samples")));
    }
    let xt = x.transpose2()?;
    let st = s.transpose2()?;
    let (weight, bias) = dense_rows(xt.data(), st.data(), n, dx, ds, lambda, "dense inverse")?;
    Ok(InverseLayer::Dense {
        weight,
        bias,
        out_shape: vec![dx],
    })
}

/// Sample-major form of the closed form: `xs` is `n x dx`, `ss` is `n x ds`.
fn dense_rows(
    xs: &[f64],
    ss: &[f64],
    n: usize,
    dx: usize,
    ds: usize,
    lambda: f64,
    context: &str,
) -> Result<(Tensor, Tensor)> {
    if n < 2 {
        return Err(Error::input(format!("{context}: need at least 2 samples, got {n}")));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::input(format!("{context}: negative lambda {lambda}")));
    }
    let mean = |m: &[f64], d: usize| {
        let mut mu = vec![0.0; d];
        for row in m.chunks(d) {
            mu.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        mu.iter_mut().for_each(|v| *v /= n as f64);
        mu
    };
    let centre = |m: &[f64], mu: &[f64], d: usize| -> Vec<f64> {
        m.chunks(d)
            .flat_map(|row| row.iter().zip(mu).map(|(a, b)| a - b))
            .collect()
    };
    let (mx, ms) = (mean(xs, dx), mean(ss, ds));
    let (xc, sc) = (centre(xs, &mx, dx), centre(ss, &ms, ds));

    let mut gram = vec![0.0; ds * ds];
    gemm(ds, n, ds, 1.0, &sc, Trans::T, &sc, Trans::N, 0.0, &mut gram);
    for i in 0..ds {
        for j in 0..i {
            let v = 0.5 * (gram[i * ds + j] + gram[j * ds + i]);
            gram[i * ds + j] = v;
            gram[j * ds + i] = v;
        }
        gram[i * ds + i] += lambda;
    }
    let mut cross = vec![0.0; ds * dx];
    gemm(ds, n, dx, 1.0, &sc, Trans::T, &xc, Trans::N, 0.0, &mut cross);
    let wt = solve_spd(
        &Tensor::new(&[ds, ds], gram)?,
        &Tensor::new(&[ds, dx], cross)?,
        context,
    )?;
    let weight = wt.transpose2()?;
    let w = weight.data();
    let bias: Vec<f64> = (0..dx)
        .map(|r| mx[r] - w[r * ds..(r + 1) * ds].iter().zip(&ms).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    Ok((weight, Tensor::new(&[dx], bias)?))
}

/// Optimiser settings for [`fit_conv_inverse`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvFit {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for ConvFit {
    fn default() -> Self {
        ConvFit {
            epochs: 20,
            lr: 0.01,
            momentum: 0.9,
        }
    }
}

fn conv_geom(x: &Tensor, s: &Tensor, kernel: &Tensor) -> Result<(usize, ConvGeom)> {
    let (n, ci, h, w) = match x.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(Error::dim(format!("X must be [N, C, H, W], got {:?}", x.shape()))),
    };
    let (co, kci, kh, kw) = match kernel.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(Error::dim(format!("kernel must be rank 4, got {:?}", kernel.shape()))),
    };
    if kci != ci || kh > h || kw > w || s.shape() != [n, co, h - kh + 1, w - kw + 1] {
        return Err(Error::dim(format!(
            "X {:?}, S {:?} and kernel {:?} do not chain through a transposed convolution",
            x.shape(),
            s.shape(),
            kernel.shape()
        )));
    }
    Ok((
        n,
        ConvGeom {
            c_in: ci,
            c_out: co,
            h,
            w,
            kh,
            kw,
        },
    ))
}

/// `recon = convT(s, kernel)` for one sample, using `cols` as scratch.
fn reconstruct(s: &[f64], g: &ConvGeom, kernel: &[f64], cols: &mut [f64], recon: &mut [f64]) {
    gemm(g.patch(), g.c_out, g.positions(), 1.0, kernel, Trans::T, s, Trans::N, 0.0, cols);
    recon.iter_mut().for_each(|v| *v = 0.0);
    col2im(cols, g, recon);
}

/// Mean squared error over all elements and, if `grad` is given, its
/// gradient with respect to the kernel (accumulated into `grad`).
fn conv_mse(xs: &[f64], ss: &[f64], n: usize, g: &ConvGeom, kernel: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
    let (patch, pos) = (g.patch(), g.positions());
    let xn = g.c_in * g.h * g.w;
    let sn = g.c_out * pos;
    let total = (n * xn) as f64;
    let mut cols = vec![0.0; patch * pos];
    let mut recon = vec![0.0; xn];
    let mut loss = 0.0;
    for i in 0..n {
        let s = &ss[i * sn..(i + 1) * sn];
        reconstruct(s, g, kernel, &mut cols, &mut recon);
        for (r, x) in recon.iter_mut().zip(&xs[i * xn..(i + 1) * xn]) {
            *r = x - *r;
            loss += *r * *r;
        }
        if let Some(dk) = grad.as_deref_mut() {
            im2col(&recon, g, &mut cols);
            gemm(g.c_out, pos, patch, -2.0 / total, s, Trans::N, &cols, Trans::T, 1.0, dk);
        }
    }
    loss / total
}

/// Reconstruction MSE `mean ‖X − convT(S, kernel)‖²` and its gradient with
/// respect to `kernel`. `x: [N, C_l, H, W]`, `s: [N, C_{l+1}, H', W']`.
pub fn conv_inverse_objective(x: &Tensor, s: &Tensor, kernel: &Tensor) -> Result<(f64, Tensor)> {
    let (n, g) = conv_geom(x, s, kernel)?;
    let mut grad = vec![0.0; kernel.numel()];
    let mse = conv_mse(x.data(), s.data(), n, &g, kernel.data(), Some(&mut grad));
    Ok((mse, Tensor::from_parts(kernel.shape().to_vec(), grad)))
}

/// Fits a transposed-convolution kernel by full-batch gradient descent with
/// momentum, starting from `init`. Returns the kernel and the MSE before
/// the first epoch and after each epoch.
pub fn fit_conv_inverse(x: &Tensor, s: &Tensor, init: &Tensor, cfg: &ConvFit) -> Result<(Tensor, Vec<f64>)> {
    let (n, g) = conv_geom(x, s, init)?;
    let mut k = init.data().to_vec();
    let mut v = vec![0.0; k.len()];
    let mut grad = vec![0.0; k.len()];
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        history.push(conv_mse(x.data(), s.data(), n, &g, &k, Some(&mut grad)));
        for ((w, vel), gr) in k.iter_mut().zip(&mut v).zip(&grad) {
            *vel = cfg.momentum * *vel - cfg.lr * gr;
            *w += *vel;
        }
    }
    let last = conv_mse(x.data(), s.data(), n, &g, &k, None);
    if !last.is_finite() || k.iter().any(|w| !w.is_finite()) {
        return Err(Error::input("convolutional inverse diverged; lower the learning rate"));
    }
    history.push(last);
    Ok((Tensor::from_parts(init.shape().to_vec(), k), history))
}

/// Scales `kernel` by the scalar `a` minimising `mean ‖X − a·convT(S, kernel)‖²`.
/// Returns the kernel unchanged when its reconstruction is identically zero.
pub fn rescale_kernel(x: &Tensor, s: &Tensor, kernel: &Tensor) -> Result<(Tensor, f64)> {
    let (n, g) = conv_geom(x, s, kernel)?;
    let xn = g.c_in * g.h * g.w;
    let sn = g.c_out * g.positions();
    let mut cols = vec![0.0; g.patch() * g.positions()];
    let mut recon = vec![0.0; xn];
    let (mut cross, mut energy) = (0.0, 0.0);
    for i in 0..n {
        reconstruct(&s.data()[i * sn..(i + 1) * sn], &g, kernel.data(), &mut cols, &mut recon);
        for (r, xv) in recon.iter().zip(&x.data()[i * xn..(i + 1) * xn]) {
            cross += r * xv;
            energy += r * r;
        }
    }
    let a = if energy > 0.0 { cross / energy } else { 1.0 };
    Ok((kernel.scale(a), a))
}

fn random_kernel(shape: &[usize], seed: u64) -> Tensor {
    let fan_in = shape[1] * shape[2] * shape[3];
    let fan_out = shape[0] * shape[2] * shape[3];
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| dist.sample(&mut rng))
}

fn stack_flat(items: &[&Tensor]) -> Vec<f64> {
    let mut out = Vec::with_capacity(items.iter().map(|t| t.numel()).sum());
    for t in items {
        out.extend_from_slice(t.data());
    }
    out
}

/// Fits the inverse network of class `class` top-down from the traced
/// samples selected by `cfg.fit_subset`.
pub fn fit_inverse_network(
    net: &Network,
    traces: &TraceStore,
    class: usize,
    cfg: &InverseConfig,
) -> Result<InverseNetwork> {
    cfg.validate()?;
    traces.check_model(net)?;
    if class >= net.class_count() {
        return Err(Error::input(format!(
            "class {class} out of range for {} classes",
            net.class_count()
        )));
    }
    let records: Vec<_> = traces
        .iter()
        .map(|(_, r)| r)
        .filter(|r| cfg.fit_subset == FitSubset::All || r.label == class)
        .collect();
    if records.is_empty() {
        return Err(Error::input(format!("no traced samples to fit class {class}")));
    }
    let n = records.len();
    let shapes = net.activation_shapes();
    let masks = relu_masks(net, cfg.mask_input);
    let layers_n = net.layers().len();

    let mut signals: Vec<Tensor> = records.iter().map(|r| Tensor::scalar(r.trace.logit(class))).collect();
    let mut inverses: Vec<Option<InverseLayer>> = vec![None; layers_n];
    let mut diagnostics = Vec::with_capacity(layers_n);

    for k in (0..layers_n).rev() {
        let x_shape = &shapes[k];
        let xs: Vec<&Tensor> = records.iter().map(|r| &r.trace.activations[k]).collect();
        let context = format!("layer {k} inverse for class {class}");
        let mut epoch_mse = Vec::new();
        let inverse = match &net.layers()[k] {
            Layer::Dense { .. } => {
                let dx: usize = x_shape.iter().product();
                let ds = signals[0].numel();
                let (weight, bias) = dense_rows(
                    &stack_flat(&xs),
                    &stack_flat(&signals.iter().collect::<Vec<_>>()),
                    n,
                    dx,
                    ds,
                    cfg.lambda,
                    &context,
                )?;
                InverseLayer::Dense {
                    weight,
                    bias,
                    out_shape: x_shape.clone(),
                }
            }
            Layer::Conv2d { kernel, .. } => {
                let init = match cfg.kernel_init {
                    KernelInit::ForwardCopy => kernel.clone(),
                    KernelInit::Random(seed) => random_kernel(kernel.shape(), seed.wrapping_add(k as u64)),
                };
                let mut xshape = vec![n];
                xshape.extend_from_slice(x_shape);
                let mut sshape = vec![n];
                sshape.extend_from_slice(signals[0].shape());
                let x = Tensor::from_parts(xshape, stack_flat(&xs));
                let s = Tensor::from_parts(sshape, stack_flat(&signals.iter().collect::<Vec<_>>()));
                let init = if cfg.rescale_init {
                    let (k, a) = rescale_kernel(&x, &s, &init)?;
                    log::debug!("{context}: initial kernel scaled by {a:.4}");
                    k
                } else {
                    init
                };
                let fit = ConvFit {
                    epochs: cfg.epochs,
                    lr: cfg.lr,
                    momentum: cfg.momentum,
                };
                let (kernel, history) = fit_conv_inverse(&x, &s, &init, &fit)
                    .map_err(|e| Error::input(format!("{context}: {e}")))?;
                epoch_mse = history;
                InverseLayer::Conv { kernel }
            }
            Layer::MaxPool2d => InverseLayer::Unpool,
            Layer::Flatten => InverseLayer::Flatten {
                target_shape: x_shape.clone(),
            },
        };

        let mut sq = 0.0;
        for (sig, rec) in signals.iter_mut().zip(&records) {
            let out = match &inverse {
                InverseLayer::Unpool => {
                    let sw = rec.trace.switches[k].as_ref().ok_or_else(|| {
                        Error::format(format!("trace lacks switches for pooling layer {k}"))
                    })?;
                    unpool2d(sig, sw)?
                }
                g => g.apply(sig, None)?,
            };
            let x = &rec.trace.activations[k];
            sq += out.sub(x)?.data().iter().map(|v| v * v).sum::<f64>();
            *sig = if masks[k] { forward_relu_mask(&out, x)? } else { out };
        }
        let mse = sq / (n * x_shape.iter().product::<usize>()) as f64;
        log::info!("class {class}, layer {k} ({:?}): reconstruction MSE {mse:.6e}", inverse.kind());
        diagnostics.push(LayerFit {
            layer: k,
            kind: inverse.kind(),
            mse,
            epoch_mse,
        });
        inverses[k] = Some(inverse);
    }
    diagnostics.reverse();

    Ok(InverseNetwork {
        target_class: class,
        layers: inverses.into_iter().map(|g| g.expect("every layer fitted")).collect(),
        masks,
        diagnostics,
        config: cfg.clone(),
        model_hash: net.content_hash(),
        fit_samples: n,
    })
}
