//! Signed heatmaps as binary PGM/PPM images.
//!
//! Values are scaled by `max|v|` and mapped blue (negative) through white
//! (zero) to red (positive). Grayscale output keeps only the magnitude:
//! white at zero, black at `max|v|`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary grayscale, `P5`.
    Pgm,
    /// Binary RGB, `P6`.
    Ppm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("ppm") => Ok(ImageFormat::Ppm),
            _ => Err(Error::Usage(format!(
                "cannot tell the image format of {}; use a .pgm or .ppm extension",
                path.display()
            ))),
        }
    }
}

/// Reduces `[H, W]` or `[C, H, W]` (channel mean) to `(H, W, values)`.
fn plane(map: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    match *map.shape() {
        [h, w] => Ok((h, w, map.data().to_vec())),
        [c, h, w] => {
            let mut out = vec![0.0; h * w];
            for ch in map.data().chunks(h * w) {
                out.iter_mut().zip(ch).for_each(|(o, v)| *o += v / c as f64);
            }
            Ok((h, w, out))
        }
        _ => Err(Error::dim(format!("heatmap needs [H, W] or [C, H, W], got {:?}", map.shape()))),
    }
}

/// `v / max|v|`; an all-zero map stays zero and logs a warning.
fn normalized(values: &[f64]) -> Vec<f64> {
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        log::warn!("attribution is zero everywhere; rendering a blank image");
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| v / m).collect()
}

fn level(x: f64) -> u8 {
    (255.0 * x).round().clamp(0.0, 255.0) as u8
}

fn rgb(t: f64) -> [u8; 3] {
    if t >= 0.0 {
        let f = level(1.0 - t);
        [255, f, f]
    } else {
        let f = level(1.0 + t);
        [f, f, 255]
    }
}

pub fn encode(map: &Tensor, format: ImageFormat) -> Result<Vec<u8>> {
    let (h, w, values) = plane(map)?;
    let t = normalized(&values);
    let magic = match format {
        ImageFormat::Pgm => "P5",
        ImageFormat::Ppm => "P6",
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    match format {
        ImageFormat::Pgm => out.extend(t.iter().map(|v| level(1.0 - v.abs()))),
        ImageFormat::Ppm => out.extend(t.iter().flat_map(|&v| rgb(v))),
    }
    Ok(out)
}

/// Writes `map` in the format implied by the file extension.
pub fn write_heatmap(map: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(map, ImageFormat::from_path(path)?)?;
    std::fs::write(path, bytes)?;
    Ok(())
}
