//! Big-endian IDX files as used by MNIST. Gzip-compressed files are read
//! transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(format!("{}: truncated header", path.display())))
}

fn check_magic(buf: &[u8], want: u32, path: &Path) -> Result<()> {
    let got = be_u32(buf, 0, path)?;
    if got != want {
        return Err(Error::format(format!(
            "{}: magic {got:#010x}, expected {want:#010x}",
            path.display()
        )));
    }
    Ok(())
}

/// Reads an IDX image file (`0x00000803`) and label file (`0x00000801`).
/// Pixels are scaled to `[0, 1]` by dividing by 255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledSet> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_maybe_gz(ip)?;
    let lab = read_maybe_gz(lp)?;
    check_magic(&img, IMAGE_MAGIC, ip)?;
    check_magic(&lab, LABEL_MAGIC, lp)?;
    let n = be_u32(&img, 4, ip)? as usize;
    let rows = be_u32(&img, 8, ip)? as usize;
    let cols = be_u32(&img, 12, ip)? as usize;
    let nl = be_u32(&lab, 4, lp)? as usize;
    if n != nl {
        return Err(Error::format(format!(
            "{} holds {n} images but {} holds {nl} labels",
            ip.display(),
            lp.display()
        )));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::format(format!("{}: empty image file", ip.display())));
    }
    let pixels = img
        .get(16..16 + n * rows * cols)
        .ok_or_else(|| Error::format(format!("{}: truncated pixel data", ip.display())))?;
    let labels = lab
        .get(8..8 + n)
        .ok_or_else(|| Error::format(format!("{}: truncated label data", lp.display())))?;
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let images = Tensor::new(&[n, 1, rows, cols], data)?;
    LabeledSet::new(images, labels.iter().map(|&l| l as usize).collect())
}

/// Writes a single-channel set as an IDX pair, quantizing pixels to
/// `round(255 v)`. Paths ending in `.gz` are gzip-compressed.
pub fn write_idx(set: &LabeledSet, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let shape = set.sample_shape();
    if shape[0] != 1 {
        return Err(Error::dim(format!("IDX images must have one channel, got {shape:?}")));
    }
    if let Some(&l) = set.labels().iter().find(|&&l| l > 255) {
        return Err(Error::input(format!("label {l} does not fit in a byte")));
    }
    let n = set.len() as u32;
    let mut img = Vec::with_capacity(16 + set.images().numel());
    for v in [IMAGE_MAGIC, n, shape[1] as u32, shape[2] as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(set.images().data().iter().map(|v| (v * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + set.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(set.labels().iter().map(|&l| l as u8));
    write_maybe_gz(images_path.as_ref(), &img)?;
    write_maybe_gz(labels_path.as_ref(), &lab)
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// File-name prefix used by the MNIST distribution.
    pub fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Directory holding the MNIST IDX files: `$MIPIN_MNIST_DIR` if set,
/// otherwise `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("MIPIN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::input(format!("{stem}[.gz] not found in {}", dir.display())))
}

/// Image and label file paths for `split` in `dir`, compressed or not.
pub fn mnist_files(dir: impl AsRef<Path>, split: Split) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    let prefix = split.prefix();
    Ok((
        find(dir, &format!("{prefix}-images-idx3-ubyte"))?,
        find(dir, &format!("{prefix}-labels-idx1-ubyte"))?,
    ))
}

/// Loads the standard MNIST file pair for `split` from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<LabeledSet> {
    let (images, labels) = mnist_files(dir, split)?;
    load_idx(images, labels)
}
