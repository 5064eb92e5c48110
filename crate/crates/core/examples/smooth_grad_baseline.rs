//! Gradient and smoothed-gradient saliency for a shapes classifier, written
//! next to the input as heatmaps.

use mipin::baselines::{default_sigma, gradient_saliency, smooth_grad};
use mipin::data::gen_shapes;
use mipin::heatmap::write_heatmap;
use mipin::net::{train_sgd, Architecture, Network, TrainConfig};

fn main() -> mipin::Result<()> {
    let (train, _) = gen_shapes(5, 1000, 32)?;
    let cfg = TrainConfig {
        lr: 0.05,
        epochs: 10,
        batch: 32,
        dropout: 0.0,
        ..TrainConfig::default()
    };
    let (net, _) = train_sgd(&Network::architecture(Architecture::CnnShapes, 0), &train, &cfg, None)?;
    let (test, boxes) = gen_shapes(6, 1, 32)?;
    let (x, class) = (test.sample(0), test.label(0));
    println!("class {class}, box {:?}", boxes[0]);

    let sigma = default_sigma(&x);
    write_heatmap(&x, "shape.pgm")?;
    write_heatmap(&gradient_saliency(&net, &x, class)?, "grad.ppm")?;
    write_heatmap(&smooth_grad(&net, &x, class, 50, sigma, 0)?, "smooth.ppm")?;
    println!("σ = {sigma:.3}; wrote shape.pgm, grad.ppm, smooth.ppm");
    Ok(())
}
