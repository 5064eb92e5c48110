//! End-to-end evaluation steps shared by the command-line front end,
//! the examples and the integration tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::baselines::{default_sigma, gradient_saliency, smooth_grad, SMOOTH_GRAD_SAMPLES};
use crate::data::{BoundingBox, LabeledSet, TraceStore};
use crate::error::{Error, Result};
use crate::metrics::{class_sensitivity, localization, saliency_from_attribution, EvalReport, LogitPair};
use crate::mipin::{fit_inverse_network, invert, load_inverse, save_inverse, AttributionResult, InverseConfig, InverseNetwork};
use crate::net::Network;
use crate::tensor::Tensor;

/// File name of the inverse network for `class` inside an inverse directory.
pub fn inverse_file_name(class: usize) -> String {
    format!("class-{class}.mipi")
}

/// Per-class inverse networks of one model.
#[derive(Clone, Debug, Default)]
pub struct InverseSet {
    nets: BTreeMap<usize, InverseNetwork>,
}

impl InverseSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit(net: &Network, traces: &TraceStore, classes: &[usize], cfg: &InverseConfig) -> Result<Self> {
        let mut set = InverseSet::new();
        for &c in classes {
            set.insert(fit_inverse_network(net, traces, c, cfg)?);
        }
        Ok(set)
    }

    pub fn insert(&mut self, inv: InverseNetwork) {
        self.nets.insert(inv.target_class, inv);
    }

    pub fn get(&self, class: usize) -> Result<&InverseNetwork> {
        self.nets
            .get(&class)
            .ok_or_else(|| Error::input(format!("no inverse network for class {class}; run `mipin fit --class {class}`")))
    }

    pub fn classes(&self) -> Vec<usize> {
        self.nets.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &InverseNetwork> {
        self.nets.values()
    }

    /// Writes one file per class; returns the paths in class order.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (c, inv) in &self.nets {
            let p = dir.join(inverse_file_name(*c));
            save_inverse(inv, &p)?;
            paths.push(p);
        }
        Ok(paths)
    }

    pub fn load_dir(dir: impl AsRef<Path>, classes: &[usize]) -> Result<Self> {
        let mut set = InverseSet::new();
        for &c in classes {
            let path = dir.as_ref().join(inverse_file_name(c));
            if !path.is_file() {
                return Err(Error::input(format!(
                    "{} not found; run `mipin fit --class {c}` first",
                    path.display()
                )));
            }
            let inv = load_inverse(&path)?;
            if inv.target_class != c {
                return Err(Error::format(format!("{} holds class {}", inverse_file_name(c), inv.target_class)));
            }
            set.insert(inv);
        }
        Ok(set)
    }

    /// Traces `x` through `net` and attributes logit `class`.
    pub fn attribute(&self, net: &Network, x: &Tensor, class: usize) -> Result<AttributionResult> {
        let (_, trace) = net.forward_traced(x)?;
        invert(self.get(class)?, net, &trace)
    }
}

/// Own-class logit pairs for every sample of `set`.
pub fn logit_pairs(net: &Network, inverses: &InverseSet, set: &LabeledSet) -> Result<Vec<LogitPair>> {
    (0..set.len())
        .map(|i| {
            let c = set.label(i);
            let r = inverses.attribute(net, &set.sample(i), c)?;
            Ok(LogitPair {
                class: c,
                logit_x: r.logit_x,
                logit_s: r.logit_s,
            })
        })
        .collect()
}

/// Noise settings for the smoothed-gradient baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothParams {
    pub n_samples: usize,
    /// `None` picks the per-image default from [`default_sigma`].
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl Default for SmoothParams {
    fn default() -> Self {
        SmoothParams {
            n_samples: SMOOTH_GRAD_SAMPLES,
            sigma: None,
            seed: 0,
        }
    }
}

impl SmoothParams {
    fn map(&self, net: &Network, x: &Tensor, class: usize, index: usize) -> Result<Tensor> {
        let sigma = self.sigma.unwrap_or_else(|| default_sigma(x));
        smooth_grad(net, x, class, self.n_samples, sigma, self.seed.wrapping_add(index as u64))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Mipin,
    Grad,
    Smooth,
    Uniform,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mipin => "mipin",
            Method::Grad => "grad",
            Method::Smooth => "smooth",
            Method::Uniform => "uniform",
        }
    }
}

/// `H x W` saliency of sample `index` for `class` under `method`.
pub fn saliency(
    method: Method,
    net: &Network,
    inverses: &InverseSet,
    smooth: &SmoothParams,
    x: &Tensor,
    class: usize,
    index: usize,
) -> Result<Tensor> {
    let map = match method {
        Method::Mipin => inverses.attribute(net, x, class)?.attribution,
        Method::Grad => gradient_saliency(net, x, class)?,
        Method::Smooth => smooth.map(net, x, class, index)?,
        Method::Uniform => Tensor::zeros(x.shape()),
    };
    let (_, h, w) = map.dims3()?;
    saliency_from_attribution(&map, (h, w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityRow {
    pub method: Method,
    pub mean_l2: f64,
    /// Samples whose two maps differ by more than `1e-6`.
    pub differing: usize,
    pub samples: usize,
}

/// Mean L2 distance between the maps for classes `a` and `b`, per method.
pub fn sensitivity_rows(
    net: &Network,
    inverses: &InverseSet,
    set: &LabeledSet,
    (a, b): (usize, usize),
    methods: &[Method],
    smooth: &SmoothParams,
) -> Result<Vec<SensitivityRow>> {
    if set.is_empty() {
        return Err(Error::input("class sensitivity over an empty set"));
    }
    methods
        .iter()
        .map(|&m| {
            let mut maps_a = Vec::with_capacity(set.len());
            let mut maps_b = Vec::with_capacity(set.len());
            for i in 0..set.len() {
                let x = set.sample(i);
                maps_a.push(saliency(m, net, inverses, smooth, &x, a, i)?);
                maps_b.push(saliency(m, net, inverses, smooth, &x, b, i)?);
            }
            let differing = maps_a
                .iter()
                .zip(&maps_b)
                .filter(|(p, q)| p.sub(q).map(|d| d.norm() > 1e-6).unwrap_or(false))
                .count();
            Ok(SensitivityRow {
                method: m,
                mean_l2: class_sensitivity(&maps_a, &maps_b)?,
                differing,
                samples: set.len(),
            })
        })
        .collect()
}

/// Localization α of each method's own-class map against `boxes`.
pub fn localization_reports(
    net: &Network,
    inverses: &InverseSet,
    set: &LabeledSet,
    boxes: &[BoundingBox],
    methods: &[Method],
    smooth: &SmoothParams,
) -> Result<Vec<EvalReport>> {
    if boxes.len() != set.len() {
        return Err(Error::input(format!("{} boxes for {} images", boxes.len(), set.len())));
    }
    methods
        .iter()
        .map(|&m| {
            let mut samples = Vec::with_capacity(set.len());
            for (i, bbox) in boxes.iter().enumerate() {
                let c = set.label(i);
                let map = saliency(m, net, inverses, smooth, &set.sample(i), c, i)?;
                samples.push((c, localization(&map, bbox)?));
            }
            EvalReport::from_samples(&format!("loc_{}", m.name()), &samples, 0)
        })
        .collect()
}
