//! Train the MLP-M digit classifier on a slice of MNIST and save it.
//!
//! ```text
//! cargo run --release --example train_mlp -- [train_images] [epochs] [out.mipn]
//! ```

use mipin::data::{load_mnist, mnist_dir, Split};
use mipin::net::{accuracy, save_model, train_sgd, Architecture, Network, TrainConfig};

fn main() -> mipin::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(10000, |s| s.parse().expect("image count"));
    let epochs: usize = args.next().map_or(5, |s| s.parse().expect("epoch count"));
    let out = args.next().unwrap_or_else(|| "mlp-m.mipn".into());

    let train = load_mnist(mnist_dir(), Split::Train)?.head(n)?;
    let test = load_mnist(mnist_dir(), Split::Test)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let (net, report) = train_sgd(&Network::architecture(Architecture::MlpM, 0), &train, &cfg, Some(&test.head(1000)?))?;
    for e in &report.epochs {
        println!(
            "epoch {:>2}  loss {:.4}  held-out accuracy {:.2}%",
            e.epoch,
            e.train_loss,
            e.heldout_accuracy.unwrap_or(0.0) * 100.0
        );
    }
    println!("test accuracy {:.2}% on {} images", accuracy(&net, &test)? * 100.0, test.len());
    save_model(&net, &out)?;
    println!("wrote {out}");
    Ok(())
}
