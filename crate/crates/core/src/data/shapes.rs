//! Synthetic single-shape images with exact bounding boxes.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class names in label order.
pub const SHAPE_CLASSES: [&str; 3] = ["square", "disc", "cross"];

const NOISE: f64 = 0.1;
const MIN_SIDE: usize = 6;
const MAX_SIDE: usize = 10;

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    /// Checks `0 <= x0 < x1 <= width` and `0 <= y0 < y1 <= height`.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.x1 > width || self.y1 > height {
            return Err(Error::input(format!(
                "degenerate box {self:?} for a {width}x{height} image"
            )));
        }
        Ok(())
    }
}

fn shape_mask(class: usize, side: usize) -> Vec<bool> {
    let mut m = vec![false; side * side];
    let r = side as f64 / 2.0;
    let bar = (side / 3).max(2);
    let lo = (side - bar) / 2;
    for y in 0..side {
        for x in 0..side {
            m[y * side + x] = match class {
                0 => true,
                1 => {
                    let (dx, dy) = (x as f64 + 0.5 - r, y as f64 + 0.5 - r);
                    dx * dx + dy * dy <= r * r
                }
                _ => (lo..lo + bar).contains(&x) || (lo..lo + bar).contains(&y),
            };
        }
    }
    m
}

/// Generates `n` single-channel `size x size` images, each holding one
/// filled square (class 0), disc (class 1) or cross (class 2) of side
/// 6 to 10 pixels at a random position over uniform background noise in
/// `[0, 0.1)`. Returns the tight box around every shape.
pub fn gen_shapes(seed: u64, n: usize, size: usize) -> Result<(LabeledSet, Vec<BoundingBox>)> {
    if n == 0 {
        return Err(Error::input("gen_shapes needs n >= 1"));
    }
    if size < MAX_SIDE {
        return Err(Error::input(format!("image size {size} below the largest shape ({MAX_SIDE})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = size * size;
    let mut data = Vec::with_capacity(n * plane);
    let mut labels = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..SHAPE_CLASSES.len());
        let side = rng.random_range(MIN_SIDE..=MAX_SIDE);
        let ox = rng.random_range(0..=size - side);
        let oy = rng.random_range(0..=size - side);
        let mut img: Vec<f64> = (0..plane).map(|_| rng.random::<f64>() * NOISE).collect();
        let mask = shape_mask(class, side);
        let mut bb = BoundingBox {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        };
        for y in 0..side {
            for x in 0..side {
                if mask[y * side + x] {
                    let (px, py) = (ox + x, oy + y);
                    img[py * size + px] = 1.0;
                    bb.x0 = bb.x0.min(px);
                    bb.y0 = bb.y0.min(py);
                    bb.x1 = bb.x1.max(px + 1);
                    bb.y1 = bb.y1.max(py + 1);
                }
            }
        }
        data.extend_from_slice(&img);
        labels.push(class);
        boxes.push(bb);
    }
    let images = Tensor::new(&[n, 1, size, size], data)?;
    Ok((LabeledSet::new(images, labels)?, boxes))
}

/// Writes one `x0 y0 x1 y1` line per box.
pub fn write_boxes(boxes: &[BoundingBox], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(out, "{} {} {} {}", b.x0, b.y0, b.x1, b.y1);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<BoundingBox>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let v: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), n + 1)))?;
            match v[..] {
                [x0, y0, x1, y1] => Ok(BoundingBox { x0, y0, x1, y1 }),
                _ => Err(Error::format(format!("{}:{}: expected four integers", path.display(), n + 1))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_set() {
        let a = gen_shapes(9, 20, 32).unwrap();
        let b = gen_shapes(9, 20, 32).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, gen_shapes(10, 20, 32).unwrap().0);
    }

    #[test]
    fn boxes_are_small_and_valid() {
        let (set, boxes) = gen_shapes(1, 300, 32).unwrap();
        for b in &boxes {
            b.validate(32, 32).unwrap();
            assert!((b.area() as f64) / (32.0 * 32.0) < 0.33);
            assert!(b.width() >= MIN_SIDE - 1 && b.width() <= MAX_SIDE);
        }
        assert_eq!(set.class_histogram(3).iter().filter(|&&c| c > 0).count(), 3);
    }

    #[test]
    fn box_is_brighter_than_background() {
        let (set, boxes) = gen_shapes(2, 200, 32).unwrap();
        for (i, b) in boxes.iter().enumerate() {
            let img = set.sample_data(i);
            let (mut inside, mut ni, mut outside, mut no) = (0.0, 0, 0.0, 0);
            for y in 0..32 {
                for x in 0..32 {
                    if b.contains(x, y) {
                        inside += img[y * 32 + x];
                        ni += 1;
                    } else {
                        outside += img[y * 32 + x];
                        no += 1;
                    }
                }
            }
            assert!(inside / ni as f64 > outside / no as f64);
        }
    }

    #[test]
    fn box_is_tight() {
        let (set, boxes) = gen_shapes(3, 50, 32).unwrap();
        for (i, b) in boxes.iter().enumerate() {
            let img = set.sample_data(i);
            let on = |x: usize, y: usize| img[y * 32 + x] == 1.0;
            assert!((b.y0..b.y1).any(|y| on(b.x0, y)));
            assert!((b.y0..b.y1).any(|y| on(b.x1 - 1, y)));
            assert!((b.x0..b.x1).any(|x| on(x, b.y0)));
            assert!((b.x0..b.x1).any(|x| on(x, b.y1 - 1)));
        }
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(gen_shapes(0, 0, 32).is_err());
    }

    #[test]
    fn boxes_file_round_trip() {
        let (_, boxes) = gen_shapes(4, 9, 32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("boxes.txt");
        write_boxes(&boxes, &p).unwrap();
        assert_eq!(read_boxes(&p).unwrap(), boxes);
        std::fs::write(&p, "1 2 3\n").unwrap();
        assert!(read_boxes(&p).is_err());
    }
}
