//! Class sensitivity: do the maps for two different target classes differ on
//! the same image?

use mipin::data::{load_mnist, mnist_dir, Split, TraceStore};
use mipin::mipin::InverseConfig;
use mipin::net::{train_sgd, Architecture, Network, TrainConfig};
use mipin::pipeline::{sensitivity_rows, InverseSet, Method, SmoothParams};

fn main() -> mipin::Result<()> {
    let (a, b) = (3, 8);
    let train = load_mnist(mnist_dir(), Split::Train)?.head(3000)?;
    let test = load_mnist(mnist_dir(), Split::Test)?.head(50)?;
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let (net, _) = train_sgd(&Network::architecture(Architecture::MlpM, 0), &train, &cfg, None)?;

    let mut inverses = InverseSet::new();
    for c in [a, b] {
        let traces = TraceStore::record(&net, &train, &train.class_indices(c))?;
        inverses.insert(mipin::mipin::fit_inverse_network(&net, &traces, c, &InverseConfig::default())?);
    }
    let smooth = SmoothParams {
        n_samples: 10,
        ..SmoothParams::default()
    };
    let rows = sensitivity_rows(&net, &inverses, &test, (a, b), &[Method::Mipin, Method::Grad, Method::Smooth], &smooth)?;
    println!("method   mean L2   differing");
    for r in rows {
        println!("{:<8} {:>8.4}   {}/{}", r.method.name(), r.mean_l2, r.differing, r.samples);
    }
    Ok(())
}
