//! Encode a synthetic signed map as grayscale and diverging-color images.

use mipin::heatmap::{encode, write_heatmap, ImageFormat};
use mipin::Tensor;

fn main() -> mipin::Result<()> {
    // Positive bump on the left, negative bump on the right.
    let map = Tensor::from_fn(&[32, 48], |i| {
        let (y, x) = ((i / 48) as f64, (i % 48) as f64);
        let bump = |cx: f64| (-((x - cx).powi(2) + (y - 16.0).powi(2)) / 40.0).exp();
        bump(14.0) - 0.6 * bump(34.0)
    });
    let pgm = encode(&map, ImageFormat::Pgm)?;
    println!("PGM: {} bytes, header {:?}", pgm.len(), String::from_utf8_lossy(&pgm[..13]));
    write_heatmap(&map, "bumps.pgm")?;
    write_heatmap(&map, "bumps.ppm")?;
    println!("wrote bumps.pgm and bumps.ppm");
    Ok(())
}
