//! Localization on the synthetic shapes: how much of each method's top
//! saliency falls inside the shape's bounding box.

use mipin::data::{gen_shapes, TraceStore};
use mipin::mipin::InverseConfig;
use mipin::net::{accuracy, train_sgd, Architecture, Network, TrainConfig};
use mipin::pipeline::{localization_reports, InverseSet, Method, SmoothParams};

fn main() -> mipin::Result<()> {
    let (train, _) = gen_shapes(0, 1500, 32)?;
    let (test, boxes) = gen_shapes(1, 200, 32)?;
    let cfg = TrainConfig {
        lr: 0.05,
        epochs: 15,
        batch: 32,
        dropout: 0.0,
        ..TrainConfig::default()
    };
    let (net, _) = train_sgd(&Network::architecture(Architecture::CnnShapes, 0), &train, &cfg, None)?;
    println!("accuracy {:.1}%", accuracy(&net, &test)? * 100.0);

    let all: Vec<usize> = (0..train.len()).collect();
    let traces = TraceStore::record(&net, &train, &all)?;
    let inverses = InverseSet::fit(&net, &traces, &[0, 1, 2], &InverseConfig::default())?;
    let smooth = SmoothParams {
        n_samples: 10,
        ..SmoothParams::default()
    };
    let methods = [Method::Mipin, Method::Grad, Method::Smooth, Method::Uniform];
    for report in localization_reports(&net, &inverses, &test, &boxes, &methods, &smooth)? {
        print!("{}", report.to_table());
    }
    Ok(())
}
