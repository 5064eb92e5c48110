//! Fit the inverse of every layer of a small CNN on the synthetic shapes and
//! print how the convolutional inverses converge.

use mipin::data::{gen_shapes, TraceStore};
use mipin::mipin::{fit_inverse_network, InverseConfig, KernelInit};
use mipin::net::{accuracy, train_sgd, Architecture, Network, TrainConfig};

fn main() -> mipin::Result<()> {
    let (train, _) = gen_shapes(1, 1000, 32)?;
    let (test, _) = gen_shapes(2, 200, 32)?;
    let cfg = TrainConfig {
        lr: 0.05,
        epochs: 10,
        batch: 32,
        dropout: 0.0,
        ..TrainConfig::default()
    };
    let (net, _) = train_sgd(&Network::architecture(Architecture::CnnShapes, 0), &train, &cfg, None)?;
    println!("shapes accuracy {:.1}%", accuracy(&net, &test)? * 100.0);

    let class = 1;
    let traces = TraceStore::record(&net, &train, &train.class_indices(class))?;
    for (name, init) in [("forward kernel", KernelInit::ForwardCopy), ("random kernel", KernelInit::Random(3))] {
        let inv = fit_inverse_network(
            &net,
            &traces,
            class,
            &InverseConfig {
                kernel_init: init,
                ..InverseConfig::default()
            },
        )?;
        println!("{name}:");
        for d in &inv.diagnostics {
            match d.epoch_mse.as_slice() {
                [] => println!("  layer {} {:?}: mse {:.3e}", d.layer, d.kind, d.mse),
                [first, .., last] => println!(
                    "  layer {} {:?}: mse {:.3e} -> {:.3e} over {} epochs",
                    d.layer,
                    d.kind,
                    first,
                    last,
                    d.epoch_mse.len() - 1
                ),
                [only] => println!("  layer {} {:?}: mse {only:.3e}", d.layer, d.kind),
            }
        }
    }
    Ok(())
}
