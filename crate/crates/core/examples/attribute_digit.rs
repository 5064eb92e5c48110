//! Attribute one MNIST digit with MIP-IN and write the attribution, the
//! source signal and the distractor as heatmaps.
//!
//! ```text
//! cargo run --release --example attribute_digit -- [test_index] [out_dir]
//! ```

use std::path::PathBuf;

use mipin::data::{load_mnist, mnist_dir, Split, TraceStore};
use mipin::heatmap::write_heatmap;
use mipin::mipin::{distractor, fit_inverse_network, invert, InverseConfig};
use mipin::net::{train_sgd, Architecture, Network, TrainConfig};

fn main() -> mipin::Result<()> {
    let mut args = std::env::args().skip(1);
    let index: usize = args.next().map_or(0, |s| s.parse().expect("test index"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));

    let train = load_mnist(mnist_dir(), Split::Train)?.head(5000)?;
    let test = load_mnist(mnist_dir(), Split::Test)?;
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let (net, _) = train_sgd(&Network::architecture(Architecture::MlpM, 0), &train, &cfg, None)?;

    let x = test.sample(index);
    let class = test.label(index);
    let traces = TraceStore::record(&net, &train, &train.class_indices(class))?;
    let inv = fit_inverse_network(&net, &traces, class, &InverseConfig::default())?;
    let (_, trace) = net.forward_traced(&x)?;
    let r = invert(&inv, &net, &trace)?;
    println!(
        "digit {class}: logit {:.3}, logit of the source signal {:.3}, attribution sum {:.3}",
        r.logit_x,
        r.logit_s,
        r.attribution.sum()
    );

    std::fs::create_dir_all(&out)?;
    for (name, map) in [
        ("attribution.ppm", r.attribution.clone()),
        ("source.pgm", r.source_signal.clone()),
        ("distractor.pgm", distractor(&x, &r)?),
        ("input.pgm", x),
    ] {
        write_heatmap(&map, out.join(name))?;
        println!("wrote {}", out.join(name).display());
    }
    Ok(())
}
