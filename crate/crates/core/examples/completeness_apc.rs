//! Completeness of MIP-IN attributions: how far `Φ(S_0)` lands from `Φ(x)`.

use mipin::data::{load_mnist, mnist_dir, Split, TraceStore};
use mipin::metrics::{apc, positive_apc};
use mipin::mipin::InverseConfig;
use mipin::net::{train_sgd, Architecture, Network, TrainConfig};
use mipin::pipeline::{logit_pairs, InverseSet};

fn main() -> mipin::Result<()> {
    let train = load_mnist(mnist_dir(), Split::Train)?.head(10000)?;
    let test = load_mnist(mnist_dir(), Split::Test)?.head(500)?;
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let (net, _) = train_sgd(&Network::architecture(Architecture::MlpM, 0), &train, &cfg, None)?;

    let all: Vec<usize> = (0..train.len()).collect();
    let traces = TraceStore::record(&net, &train, &all)?;
    let classes: Vec<usize> = (0..10).collect();
    let inverses = InverseSet::fit(&net, &traces, &classes, &InverseConfig::default())?;

    let pairs = logit_pairs(&net, &inverses, &test)?;
    print!("{}", apc(&pairs)?.to_table());
    print!("{}", positive_apc(&pairs)?.to_table());
    Ok(())
}
