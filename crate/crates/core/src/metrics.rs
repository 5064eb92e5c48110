//! Completeness, localization and class-sensitivity metrics.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::BoundingBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples with `|Φ(x)_c|` at or below this are left out of the APC averages.
pub const ZERO_LOGIT: f64 = 1e-12;

/// Own-class logit of a sample and of its source signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogitPair {
    pub class: usize,
    pub logit_x: f64,
    pub logit_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassValue {
    pub class: usize,
    pub value: f64,
    pub count: usize,
}

/// One metric with its per-class breakdown.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub metric: String,
    /// Mean of the per-class values.
    pub overall: f64,
    pub per_class: Vec<ClassValue>,
    /// Samples left out (zero original logit).
    pub excluded: usize,
    pub config: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Line<'a> {
    metric: &'a str,
    class: Option<usize>,
    value: f64,
    count: usize,
}

impl EvalReport {
    /// Groups per-sample values by class and averages class by class.
    pub fn from_samples(metric: &str, samples: &[(usize, f64)], excluded: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input(format!("{metric}: no samples to average")));
        }
        let classes = samples.iter().map(|s| s.0).max().unwrap() + 1;
        let mut sums = vec![0.0; classes];
        let mut counts = vec![0usize; classes];
        for &(c, v) in samples {
            sums[c] += v;
            counts[c] += 1;
        }
        let per_class: Vec<ClassValue> = (0..classes)
            .filter(|&c| counts[c] > 0)
            .map(|c| ClassValue {
                class: c,
                value: sums[c] / counts[c] as f64,
                count: counts[c],
            })
            .collect();
        let overall = per_class.iter().map(|c| c.value).sum::<f64>() / per_class.len() as f64;
        Ok(EvalReport {
            metric: metric.to_string(),
            overall,
            per_class,
            excluded,
            config: Vec::new(),
        })
    }

    pub fn with_config(mut self, config: Vec<(String, String)>) -> Self {
        self.config = config;
        self
    }

    pub fn sample_count(&self) -> usize {
        self.per_class.iter().map(|c| c.count).sum()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(out, "{:<8} {:>12} {:>8}", "class", self.metric, "samples");
        for c in &self.per_class {
            let _ = writeln!(out, "{:<8} {:>12.4} {:>8}", c.class, c.value, c.count);
        }
        let _ = writeln!(out, "{:<8} {:>12.4} {:>8}", "all", self.overall, self.sample_count());
        if self.excluded > 0 {
            let _ = writeln!(out, "# excluded {} samples with zero logit", self.excluded);
        }
        out
    }

    /// One JSON object per line: each class, then the overall value.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        let lines = self
            .per_class
            .iter()
            .map(|c| Line {
                metric: &self.metric,
                class: Some(c.class),
                value: c.value,
                count: c.count,
            })
            .chain(std::iter::once(Line {
                metric: &self.metric,
                class: None,
                value: self.overall,
                count: self.sample_count(),
            }));
        for line in lines {
            out.push_str(&serde_json::to_string(&line).expect("plain struct"));
            out.push('\n');
        }
        out
    }
}

fn percentage_change(metric: &str, pairs: &[LogitPair], f: impl Fn(f64) -> f64) -> Result<EvalReport> {
    let mut samples = Vec::with_capacity(pairs.len());
    let mut excluded = 0;
    for p in pairs {
        if p.logit_x.abs() <= ZERO_LOGIT {
            excluded += 1;
            continue;
        }
        samples.push((p.class, 100.0 * f(p.logit_x - p.logit_s) / p.logit_x.abs()));
    }
    if excluded > 0 {
        log::warn!("{metric}: excluded {excluded} samples with a zero original logit");
    }
    EvalReport::from_samples(metric, &samples, excluded)
}

/// Average percentage change `|Φ(x) − Φ(s)| / |Φ(x)|`, in percent,
/// averaged within each class and then over classes.
pub fn apc(pairs: &[LogitPair]) -> Result<EvalReport> {
    percentage_change("apc", pairs, f64::abs)
}

/// As [`apc`] with `relu(Φ(x) − Φ(s))` in the numerator.
pub fn positive_apc(pairs: &[LogitPair]) -> Result<EvalReport> {
    percentage_change("positive_apc", pairs, |d| d.max(0.0))
}

/// Fraction of the `n` highest-scoring pixels inside `bbox`, `n` being the
/// box area. Ties are broken toward the lowest row-major index. `attr` is
/// read as an `H x W` map (any leading extents of size 1 are ignored).
pub fn localization(attr: &Tensor, bbox: &BoundingBox) -> Result<f64> {
    let dims: Vec<usize> = attr.shape().iter().copied().filter(|&d| d != 1).collect();
    let (h, w) = match (dims.len(), attr.shape()) {
        (2, _) => (dims[0], dims[1]),
        (_, [.., hh, ww]) if hh * ww == attr.numel() => (*hh, *ww),
        _ => return Err(Error::dim(format!("localization needs an HxW map, got {:?}", attr.shape()))),
    };
    bbox.validate(w, h)?;
    let n = bbox.area();
    if 3 * n >= h * w {
        return Err(Error::input(format!(
            "box {bbox:?} covers {n} of {} pixels; it must stay under 33%",
            h * w
        )));
    }
    let v = attr.data();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let m = order[..n].iter().filter(|&&i| bbox.contains(i % w, i / w)).count();
    Ok(m as f64 / n as f64)
}

/// Mean L2 distance between paired maps.
pub fn class_sensitivity(maps_a: &[Tensor], maps_b: &[Tensor]) -> Result<f64> {
    if maps_a.len() != maps_b.len() {
        return Err(Error::dim(format!("{} maps against {}", maps_a.len(), maps_b.len())));
    }
    if maps_a.is_empty() {
        return Err(Error::input("class sensitivity of zero maps"));
    }
    let mut total = 0.0;
    for (a, b) in maps_a.iter().zip(maps_b) {
        total += a.sub(b)?.norm();
    }
    Ok(total / maps_a.len() as f64)
}

/// Channel mean of a `[C, H, W]` attribution, resized bilinearly to
/// `target = (H', W')` with pixel centres aligned and edges clamped.
pub fn saliency_from_attribution(a: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (c, h, w) = a.dims3()?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::dim("target size must be positive"));
    }
    let plane = h * w;
    let mut mean = vec![0.0; plane];
    for ch in a.data().chunks(plane) {
        mean.iter_mut().zip(ch).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);

    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let out = Tensor::from_fn(&[th, tw], |idx| {
        let (y0, y1, fy) = axis(idx / tw, h, th);
        let (x0, x1, fx) = axis(idx % tw, w, tw);
        let top = mean[y0 * w + x0] * (1.0 - fx) + mean[y0 * w + x1] * fx;
        let bottom = mean[y1 * w + x0] * (1.0 - fx) + mean[y1 * w + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(class: usize, x: f64, s: f64) -> LogitPair {
        LogitPair {
            class,
            logit_x: x,
            logit_s: s,
        }
    }

    #[test]
    fn apc_arithmetic() {
        let same = [pair(0, 2.0, 2.0), pair(1, -3.0, -3.0)];
        assert_eq!(apc(&same).unwrap().overall, 0.0);
        assert_eq!(apc(&[pair(0, 2.0, 1.0)]).unwrap().overall, 50.0);
        assert_eq!(positive_apc(&[pair(0, 2.0, 1.0)]).unwrap().overall, 50.0);
        assert_eq!(positive_apc(&[pair(0, 2.0, 3.0)]).unwrap().overall, 0.0);
    }

    #[test]
    fn apc_averages_classes_then_samples() {
        // Class 0: 10% and 30% -> 20%; class 1: 60% -> overall 40%.
        let pairs = [pair(0, 10.0, 9.0), pair(0, 10.0, 13.0), pair(1, 5.0, 2.0)];
        let r = apc(&pairs).unwrap();
        assert!((r.overall - 40.0).abs() < 1e-12);
        assert_eq!(r.per_class.len(), 2);
        assert_eq!(r.per_class[0].count, 2);
        let mean_of_classes = r.per_class.iter().map(|c| c.value).sum::<f64>() / 2.0;
        assert_eq!(r.overall, mean_of_classes);
    }

    #[test]
    fn zero_logits_are_excluded_and_counted() {
        let r = apc(&[pair(0, 0.0, 1.0), pair(0, 4.0, 3.0)]).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.overall, 25.0);
        assert!(apc(&[pair(0, 0.0, 1.0)]).is_err());
    }

    #[test]
    fn report_formats() {
        let r = apc(&[pair(0, 2.0, 1.0), pair(3, 4.0, 4.0)])
            .unwrap()
            .with_config(vec![("lambda".into(), "0.001".into())]);
        let table = r.to_table();
        assert!(table.starts_with("# lambda = 0.001\n"));
        assert!(table.contains("all"));
        let json = r.to_json_lines();
        let lines: Vec<&str> = json.lines().collect();
        assert_eq!(lines.len(), 3);
        let last: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(last["metric"], "apc");
        assert!(last["class"].is_null());
        assert_eq!(last["value"], 25.0);
    }

    fn bbox(x0: usize, y0: usize, x1: usize, y1: usize) -> BoundingBox {
        BoundingBox { x0, y0, x1, y1 }
    }

    #[test]
    fn indicator_map_localizes_perfectly() {
        let b = bbox(2, 3, 5, 6);
        let attr = Tensor::from_fn(&[10, 10], |i| if b.contains(i % 10, i / 10) { 1.0 } else { 0.0 });
        assert_eq!(localization(&attr, &b).unwrap(), 1.0);
        let chw = attr.reshape(&[1, 10, 10]).unwrap();
        assert_eq!(localization(&chw, &b).unwrap(), 1.0);
    }

    #[test]
    fn uniform_map_uses_row_major_ties() {
        // 10% box in the bottom rows: the first 10 pixels in row-major order are all outside.
        let b = bbox(0, 9, 10, 10);
        assert_eq!(localization(&Tensor::full(&[10, 10], 0.5), &b).unwrap(), 0.0);
        // Box in the top-left: the 4 selected pixels are (0..4, 0); 2 of them lie inside.
        let b = bbox(0, 0, 2, 2);
        assert_eq!(localization(&Tensor::zeros(&[10, 10]), &b).unwrap(), 0.5);
    }

    #[test]
    fn large_or_degenerate_boxes_rejected() {
        let m = Tensor::zeros(&[10, 10]);
        assert!(localization(&m, &bbox(0, 0, 6, 6)).is_err());
        assert!(localization(&m, &bbox(3, 3, 3, 5)).is_err());
        assert!(localization(&m, &bbox(8, 0, 11, 2)).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        let a = vec![Tensor::from_fn(&[2, 2], |i| i as f64)];
        assert_eq!(class_sensitivity(&a, &a).unwrap(), 0.0);
        let mut b = a[0].clone();
        b.data_mut()[3] += 1.0;
        assert_eq!(class_sensitivity(&a, &[b]).unwrap(), 1.0);
        assert!(class_sensitivity(&a, &[]).is_err());
        assert!(class_sensitivity(&a, &[Tensor::zeros(&[4])]).is_err());
    }

    #[test]
    fn saliency_identity_and_cancellation() {
        let a = Tensor::from_fn(&[1, 5, 4], |i| (i as f64).sin());
        assert_eq!(saliency_from_attribution(&a, (5, 4)).unwrap().data(), a.data());
        let pm = Tensor::from_fn(&[2, 3, 3], |i| if i < 9 { 1.0 } else { -1.0 });
        assert_eq!(saliency_from_attribution(&pm, (6, 6)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn bilinear_matches_reference_resize() {
        // Reference values from OpenCV's INTER_LINEAR resize of the same 7x7 map.
        let src = Tensor::from_fn(&[1, 7, 7], |i| ((i / 7 * 7 + i % 7 * 3) % 11) as f64 / 11.0);
        let out = saliency_from_attribution(&src, (28, 28)).unwrap();
        let probes = [
            (0, 0, 0.0),
            (0, 27, 0.6363636363636364),
            (27, 0, 0.8181818181818182),
            (27, 27, 0.45454545454545453),
            (1, 2, 0.03409090909090909),
            (3, 5, 0.47727272727272724),
            (5, 9, 0.3025568181818182),
            (8, 13, 0.2713068181818182),
            (10, 10, 0.6974431818181819),
            (12, 21, 0.375),
            (14, 3, 0.6377840909090909),
            (17, 17, 0.5383522727272727),
            (19, 25, 0.46448863636363635),
            (22, 6, 0.4431818181818182),
            (24, 15, 0.5),
            (26, 1, 0.8181818181818182),
        ];
        for (r, c, want) in probes {
            assert!((out.get(&[r, c]) - want).abs() < 1e-6, "({r},{c}) {} vs {want}", out.get(&[r, c]));
        }
    }

    proptest! {
        #[test]
        fn apc_bounds_positive_apc(xs in prop::collection::vec((0usize..4, 0.1f64..10.0, -10.0f64..10.0), 1..40)) {
            let pairs: Vec<LogitPair> = xs.iter().map(|&(c, x, s)| pair(c, x, s)).collect();
            let a = apc(&pairs).unwrap().overall;
            let p = positive_apc(&pairs).unwrap().overall;
            prop_assert!(a >= p && p >= 0.0);
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert!((apc(&rev).unwrap().overall - a).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn localization_in_unit_interval(vals in prop::collection::vec(-1.0f64..1.0, 64), x0 in 0usize..6, y0 in 0usize..6) {
            let attr = Tensor::new(&[8, 8], vals).unwrap();
            let b = bbox(x0, y0, x0 + 2, y0 + 2);
            let alpha = localization(&attr, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&alpha));
        }

        #[test]
        fn sensitivity_symmetric(a in prop::collection::vec(-1.0f64..1.0, 9), b in prop::collection::vec(-1.0f64..1.0, 9)) {
            let ta = vec![Tensor::new(&[9], a).unwrap()];
            let tb = vec![Tensor::new(&[9], b).unwrap()];
            let d = class_sensitivity(&ta, &tb).unwrap();
            prop_assert_eq!(d, class_sensitivity(&tb, &ta).unwrap());
            prop_assert_eq!(d == 0.0, ta == tb);
        }
    }
}
