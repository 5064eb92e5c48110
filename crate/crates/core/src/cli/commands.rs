use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    AttributeArgs, DataArgs, EvalArgs, FieldArg, FitArgs, GenShapesArgs, InitArg, Metric, RenderArgs, SubsetArg, TraceArgs, TrainArgs,
};
use crate::codec::{hex, sha256};
use crate::data::{
    gen_shapes as generate, load_mnist, load_traces, mnist_dir, mnist_files, read_boxes, save_traces, write_boxes,
    write_idx, LabeledSet, Split, TraceStore,
};
use crate::error::{Error, Result};
use crate::heatmap::{write_heatmap, ImageFormat};
use crate::metrics::{apc, positive_apc};
use crate::mipin::{
    invert, load_attributions, save_attributions, save_inverse, AttributionFile, AttributionRecord, FitSubset,
    InverseConfig, KernelInit,
};
use crate::net::{accuracy, load_model, save_model, Architecture, Network, TrainConfig};
use crate::pipeline::{
    inverse_file_name, localization_reports, logit_pairs, sensitivity_rows, InverseSet, Method, SmoothParams,
};

/// `3`, `1,4,7`, `0..9` (inclusive) or a mix of these.
pub(super) fn parse_indices(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Usage(format!("cannot read index list {spec:?}; use forms like 3, 1,4,7 or 0..9"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: usize = lo.trim().parse().map_err(|_| bad())?;
            let hi: usize = hi.trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    out.dedup();
    Ok(out)
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(hex(&sha256(&std::fs::read(path)?)))
}

fn flatten_json(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    use serde_json::Value;
    match v {
        Value::Null => {}
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, v, out);
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(|i| i.to_string().trim_matches('"').to_string()).collect();
            out.push((prefix.replace('_', "-"), parts.join(" ")));
        }
        Value::String(s) => out.push((prefix.replace('_', "-"), s.clone())),
        other => out.push((prefix.replace('_', "-"), other.to_string())),
    }
}

/// Config snapshot of a run: resolved flags plus the hashes of its inputs.
struct Meta {
    lines: Vec<(String, String)>,
}

impl Meta {
    fn new(command: &str, args: &impl Serialize) -> Self {
        let mut lines = vec![
            ("command".to_string(), command.to_string()),
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ];
        let value = serde_json::to_value(args).expect("argument structs serialize");
        flatten_json("", &value, &mut lines);
        Meta { lines }
    }

    fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.lines.push((format!("input.{name}.sha256"), hash_file(path)?));
        Ok(())
    }

    fn result(&mut self, key: &str, value: impl ToString) {
        self.lines.push((format!("result.{key}"), value.to_string()));
    }

    fn text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Writes `<artifact>.meta` next to the artifact.
    fn write_for(&self, artifact: &Path) -> Result<()> {
        let mut p = artifact.as_os_str().to_owned();
        p.push(".meta");
        std::fs::write(PathBuf::from(p), self.text())?;
        Ok(())
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::input(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::input(format!("{what} {} is not a directory", path.display())));
    }
    Ok(())
}

/// The directory an output file will be written to must already exist.
fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => require_dir(p, "output directory"),
        _ => Ok(()),
    }
}

fn data_dir(d: &DataArgs) -> PathBuf {
    d.data.clone().unwrap_or_else(mnist_dir)
}

fn load_split(dir: &Path, split: Split, limit: Option<usize>, meta: &mut Meta) -> Result<LabeledSet> {
    let (images, labels) = mnist_files(dir, split)?;
    meta.input(&format!("{}-images", split.prefix()), &images)?;
    meta.input(&format!("{}-labels", split.prefix()), &labels)?;
    let set = load_mnist(dir, split)?;
    match limit {
        Some(n) => set.head(n.min(set.len())),
        None => Ok(set),
    }
}

fn load_net(path: &Path, meta: &mut Meta) -> Result<Network> {
    require_file(path, "model file")?;
    meta.input("model", path)?;
    load_model(path)
}

pub(super) fn train(a: &TrainArgs) -> Result<()> {
    let arch: Architecture = a.arch.parse()?;
    let dir = data_dir(&a.data);
    require_dir(&dir, "data directory")?;
    require_parent(&a.out)?;
    let mut meta = Meta::new("train", a);
    let train_set = load_split(&dir, Split::Train, a.train_samples, &mut meta)?;
    let test_set = load_split(&dir, Split::Test, a.test_samples, &mut meta)?;
    let init = Network::architecture(arch, a.seed);
    if train_set.sample_shape() != init.input_shape() {
        return Err(Error::input(format!(
            "{arch} expects {:?} images, {} holds {:?}",
            init.input_shape(),
            dir.display(),
            train_set.sample_shape()
        )));
    }
    let cfg = TrainConfig {
        lr: a.lr,
        momentum: a.momentum,
        epochs: a.epochs,
        batch: a.batch,
        seed: a.seed,
        dropout: a.dropout,
    };
    log::info!("training {arch} on {} images for {} epochs", train_set.len(), a.epochs);
    let (net, report) = crate::net::train_sgd(&init, &train_set, &cfg, None)?;
    let acc = accuracy(&net, &test_set)?;
    save_model(&net, &a.out)?;
    if let Some(last) = report.epochs.last() {
        meta.result("train-loss", last.train_loss);
    }
    meta.result("test-accuracy", acc);
    meta.result("test-samples", test_set.len());
    meta.result("model-hash", hex(&net.content_hash()));
    meta.write_for(&a.out)?;
    println!("test accuracy: {:.2}% on {} images", acc * 100.0, test_set.len());
    println!("model written to {}", a.out.display());
    Ok(())
}

pub(super) fn trace(a: &TraceArgs) -> Result<()> {
    let dir = data_dir(&a.data);
    require_dir(&dir, "data directory")?;
    require_parent(&a.out)?;
    let mut meta = Meta::new("trace", a);
    let net = load_net(&a.model, &mut meta)?;
    let set = load_split(&dir, a.split.into(), a.samples, &mut meta)?;
    let store = TraceStore::record(&net, &set, &(0..set.len()).collect::<Vec<_>>())?;
    save_traces(&store, &a.out)?;
    meta.result("records", store.len());
    meta.write_for(&a.out)?;
    println!("traced {} samples into {}", store.len(), a.out.display());
    Ok(())
}

fn inverse_config(a: &FitArgs) -> InverseConfig {
    InverseConfig {
        lambda: a.lambda,
        epochs: a.epochs,
        lr: a.lr,
        momentum: a.momentum,
        fit_subset: match a.fit_subset {
            SubsetArg::Class => FitSubset::Class,
            SubsetArg::All => FitSubset::All,
        },
        kernel_init: match a.kernel_init {
            InitArg::Forward => KernelInit::ForwardCopy,
            InitArg::Random => KernelInit::Random(a.seed),
        },
        rescale_init: a.rescale_init,
        mask_input: a.mask_input,
        positive_only: a.positive_only,
        unit_init: a.unit_init,
    }
}

pub(super) fn fit(a: &FitArgs) -> Result<()> {
    let cfg = inverse_config(a);
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    require_file(&a.traces, "trace file")?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut meta = Meta::new("fit", a);
    let net = load_net(&a.model, &mut meta)?;
    let classes = match a.class.as_str() {
        "all" => (0..net.class_count()).collect(),
        spec => parse_indices(spec)?,
    };
    if let Some(&c) = classes.iter().find(|&&c| c >= net.class_count()) {
        return Err(Error::Usage(format!("class {c} out of range for a {}-class model", net.class_count())));
    }
    meta.input("traces", &a.traces)?;
    let store = load_traces(&a.traces, &net)?;
    for c in classes {
        let inv = crate::mipin::fit_inverse_network(&net, &store, c, &cfg)?;
        let path = a.out_dir.join(inverse_file_name(c));
        save_inverse(&inv, &path)?;
        let mut m = Meta { lines: meta.lines.clone() };
        m.result("class", c);
        m.result("fit-samples", inv.fit_samples);
        for d in &inv.diagnostics {
            m.result(&format!("layer{}-mse", d.layer), d.mse);
        }
        m.write_for(&path)?;
        let mse: Vec<String> = inv.diagnostics.iter().map(|d| format!("{:.3e}", d.mse)).collect();
        println!("class {c}: {} samples, layer MSE [{}] -> {}", inv.fit_samples, mse.join(", "), path.display());
    }
    Ok(())
}

pub(super) fn attribute(a: &AttributeArgs) -> Result<()> {
    let samples = parse_indices(&a.sample)?;
    require_dir(&a.inverse_dir, "inverse directory")?;
    require_parent(&a.out)?;
    let mut meta = Meta::new("attribute", a);
    let net = load_net(&a.model, &mut meta)?;
    if let Some(c) = a.class.filter(|&c| c >= net.class_count()) {
        return Err(Error::Usage(format!("class {c} out of range for a {}-class model", net.class_count())));
    }

    // (index, label, trace) for every requested sample.
    let mut traced = Vec::with_capacity(samples.len());
    if let Some(tp) = &a.traces {
        require_file(tp, "trace file")?;
        meta.input("traces", tp)?;
        let store = load_traces(tp, &net)?;
        for &i in &samples {
            let r = store
                .get(i)
                .ok_or_else(|| Error::input(format!("sample {i} is not in {}", tp.display())))?;
            traced.push((i, r.label, r.trace.clone()));
        }
    } else {
        let dir = data_dir(&a.data);
        let set = load_split(&dir, a.split.into(), None, &mut meta)?;
        for &i in &samples {
            if i >= set.len() {
                return Err(Error::input(format!("sample {i} out of range for {} images", set.len())));
            }
            let (_, trace) = net.forward_traced(&set.sample(i))?;
            traced.push((i, set.label(i), trace));
        }
    }

    let mut classes: Vec<usize> = traced.iter().map(|t| a.class.unwrap_or(t.1)).collect();
    classes.sort_unstable();
    classes.dedup();
    for &c in &classes {
        meta.input(&format!("inverse-{c}"), &a.inverse_dir.join(inverse_file_name(c)))?;
    }
    let inverses = InverseSet::load_dir(&a.inverse_dir, &classes)?;

    let mut records = Vec::with_capacity(traced.len());
    for (index, label, trace) in traced {
        let class = a.class.unwrap_or(label);
        let result = invert(inverses.get(class)?, &net, &trace)?;
        println!(
            "sample {index} (label {label}) class {class}: logit {:.4}, source-signal logit {:.4}",
            result.logit_x, result.logit_s
        );
        records.push(AttributionRecord { index, label, result });
    }
    let file = AttributionFile {
        meta: meta.text(),
        model_hash: net.content_hash(),
        records,
    };
    save_attributions(&file, &a.out)?;
    println!("wrote {} records to {}", file.records.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SensLine<'a> {
    metric: &'static str,
    method: &'a str,
    classes: [usize; 2],
    value: f64,
    differing: usize,
    count: usize,
}

pub(super) fn eval(a: &EvalArgs) -> Result<()> {
    let dir = data_dir(&a.data);
    require_dir(&dir, "data directory")?;
    require_dir(&a.inverse_dir, "inverse directory")?;
    if let Some(out) = &a.out {
        require_parent(out)?;
    }
    if a.smooth_samples == 0 || a.smooth_sigma.is_some_and(|s| s.is_nan() || s < 0.0) {
        return Err(Error::Usage("--smooth-samples must be >= 1 and --smooth-sigma >= 0".into()));
    }
    let split: Split = a.split.into();
    let mut meta = Meta::new("eval", a);
    let net = load_net(&a.model, &mut meta)?;
    let set = load_split(&dir, split, a.samples, &mut meta)?;
    let smooth = SmoothParams {
        n_samples: a.smooth_samples,
        sigma: a.smooth_sigma,
        seed: a.seed,
    };
    let classes: Vec<usize> = match a.metric {
        Metric::Sens => {
            let (p, q) = (a.classes[0], a.classes[1]);
            if p == q || p.max(q) >= net.class_count() {
                return Err(Error::Usage(format!("--classes needs two distinct classes below {}", net.class_count())));
            }
            vec![p.min(q), p.max(q)]
        }
        _ => (0..net.class_count()).filter(|&c| set.labels().contains(&c)).collect(),
    };
    for &c in &classes {
        meta.input(&format!("inverse-{c}"), &a.inverse_dir.join(inverse_file_name(c)))?;
    }
    let inverses = InverseSet::load_dir(&a.inverse_dir, &classes)?;
    let config: Vec<(String, String)> = meta.lines.clone();

    let (table, json) = match a.metric {
        Metric::Apc | Metric::Papc => {
            let pairs = logit_pairs(&net, &inverses, &set)?;
            let report = if a.metric == Metric::Apc { apc(&pairs)? } else { positive_apc(&pairs)? };
            let report = report.with_config(config);
            (report.to_table(), report.to_json_lines())
        }
        Metric::Loc => {
            let boxes_path = dir.join(format!("{}-boxes.txt", split.prefix()));
            require_file(&boxes_path, "bounding-box file")?;
            meta.input("boxes", &boxes_path)?;
            let mut boxes = read_boxes(&boxes_path)?;
            boxes.truncate(set.len());
            let methods = [Method::Mipin, Method::Grad, Method::Smooth, Method::Uniform];
            let reports = localization_reports(&net, &inverses, &set, &boxes, &methods, &smooth)?;
            let mut table = String::new();
            let mut json = String::new();
            for r in reports {
                let r = r.with_config(config.clone());
                table.push_str(&r.to_table());
                json.push_str(&r.to_json_lines());
            }
            (table, json)
        }
        Metric::Sens => {
            let (p, q) = (a.classes[0], a.classes[1]);
            let rows = sensitivity_rows(&net, &inverses, &set, (p, q), &[Method::Mipin, Method::Grad, Method::Smooth], &smooth)?;
            let mut table = String::new();
            for (k, v) in &config {
                let _ = writeln!(table, "# {k} = {v}");
            }
            let _ = writeln!(table, "{:<8} {:>12} {:>10} {:>8}", "method", "mean_l2", "differing", "samples");
            let mut json = String::new();
            for r in &rows {
                let _ = writeln!(table, "{:<8} {:>12.4} {:>10} {:>8}", r.method.name(), r.mean_l2, r.differing, r.samples);
                let line = SensLine {
                    metric: "sens",
                    method: r.method.name(),
                    classes: [p, q],
                    value: r.mean_l2,
                    differing: r.differing,
                    count: r.samples,
                };
                json.push_str(&serde_json::to_string(&line).expect("plain struct"));
                json.push('\n');
            }
            (table, json)
        }
    };
    print!("{table}");
    if let Some(out) = &a.out {
        std::fs::write(out, json)?;
        meta.write_for(out)?;
    }
    Ok(())
}

pub(super) fn render(a: &RenderArgs) -> Result<()> {
    ImageFormat::from_path(&a.out)?;
    require_file(&a.input, "attribution file")?;
    require_parent(&a.out)?;
    let mut meta = Meta::new("render", a);
    meta.input("attributions", &a.input)?;
    let file = load_attributions(&a.input)?;
    let rec = file.records.get(a.record).ok_or_else(|| {
        Error::input(format!("record {} out of range; the file holds {}", a.record, file.records.len()))
    })?;
    let map = match a.field {
        FieldArg::Attribution => &rec.result.attribution,
        FieldArg::Source => &rec.result.source_signal,
    };
    write_heatmap(map, &a.out)?;
    meta.result("sample", rec.index);
    meta.result("class", rec.result.target_class);
    meta.write_for(&a.out)?;
    println!("rendered sample {} (class {}) to {}", rec.index, rec.result.target_class, a.out.display());
    Ok(())
}

pub(super) fn gen_shapes(a: &GenShapesArgs) -> Result<()> {
    if a.train == 0 || a.test == 0 {
        return Err(Error::Usage("--train and --test must be at least 1".into()));
    }
    std::fs::create_dir_all(&a.out_dir)?;
    let meta = Meta::new("gen-shapes", a);
    for (split, n, seed) in [
        (Split::Train, a.train, a.seed.wrapping_mul(2)),
        (Split::Test, a.test, a.seed.wrapping_mul(2).wrapping_add(1)),
    ] {
        let (set, boxes) = generate(seed, n, a.size)?;
        let prefix = split.prefix();
        let images = a.out_dir.join(format!("{prefix}-images-idx3-ubyte"));
        write_idx(&set, &images, a.out_dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
        write_boxes(&boxes, a.out_dir.join(format!("{prefix}-boxes.txt")))?;
        meta.write_for(&images)?;
    }
    println!(
        "wrote {} training and {} test {}x{} images to {}",
        a.train,
        a.test,
        a.size,
        a.size,
        a.out_dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_lists() {
        assert_eq!(parse_indices("3").unwrap(), vec![3]);
        assert_eq!(parse_indices("0..9").unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(parse_indices("1, 4,7..8").unwrap(), vec![1, 4, 7, 8]);
        for bad in ["", "a", "5..2", "1..", "-1"] {
            assert!(matches!(parse_indices(bad), Err(Error::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn meta_flattens_arguments() {
        #[derive(Serialize)]
        struct A {
            lambda: f64,
            out_dir: PathBuf,
            classes: Vec<usize>,
            data: Option<PathBuf>,
        }
        let m = Meta::new(
            "x",
            &A {
                lambda: 0.001,
                out_dir: "inv".into(),
                classes: vec![3, 8],
                data: None,
            },
        );
        let text = m.text();
        assert!(text.contains("lambda = 0.001\n"));
        assert!(text.contains("out-dir = inv\n"));
        assert!(text.contains("classes = 3 8\n"));
        assert!(!text.contains("data"));
    }
}
