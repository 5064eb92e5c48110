//! Labeled image sets, MNIST IDX ingestion, the synthetic shapes set and
//! persisted forward traces.

mod idx;
mod shapes;
mod traces;

pub use idx::{load_idx, load_mnist, mnist_dir, mnist_files, write_idx, Split};
pub use shapes::{gen_shapes, read_boxes, write_boxes, BoundingBox, SHAPE_CLASSES};
pub use traces::{load_traces, save_traces, TraceRecord, TraceStore};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `[N, C, H, W]` with values in `[0, 1]` and one class index per image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    images: Tensor,
    labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::dim(format!(
                "images must be [N, C, H, W], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::dim(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(LabeledSet { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// `[C, H, W]`
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn sample_numel(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn sample_data(&self, i: usize) -> &[f64] {
        let n = self.sample_numel();
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn sample(&self, i: usize) -> Tensor {
        self.images.slice_outer(i)
    }

    /// Number of distinct classes, taken as one past the largest label.
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn class_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                h[l] += 1;
            }
        }
        h
    }

    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<LabeledSet> {
        if indices.is_empty() {
            return Err(Error::input("empty subset"));
        }
        let n = self.sample_numel();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::input(format!("sample {i} out of range for {} samples", self.len())));
            }
            data.extend_from_slice(self.sample_data(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok(LabeledSet {
            images: Tensor::from_parts(shape, data),
            labels,
        })
    }

    /// The first `n` samples (or all of them if there are fewer).
    pub fn head(&self, n: usize) -> Result<LabeledSet> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Splits into the first `at` samples and the rest.
    pub fn split(&self, at: usize) -> Result<(LabeledSet, LabeledSet)> {
        if at == 0 || at >= self.len() {
            return Err(Error::input(format!(
                "split point {at} must leave both parts non-empty ({} samples)",
                self.len()
            )));
        }
        let a: Vec<usize> = (0..at).collect();
        let b: Vec<usize> = (at..self.len()).collect();
        Ok((self.subset(&a)?, self.subset(&b)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LabeledSet {
        let images = Tensor::from_fn(&[4, 1, 2, 2], |i| i as f64 / 16.0);
        LabeledSet::new(images, vec![0, 1, 0, 2]).unwrap()
    }

    #[test]
    fn sample_access() {
        let s = toy();
        assert_eq!(s.len(), 4);
        assert_eq!(s.sample_shape(), &[1, 2, 2]);
        assert_eq!(s.sample(1).data(), &[4.0 / 16.0, 5.0 / 16.0, 6.0 / 16.0, 7.0 / 16.0]);
        assert_eq!(s.sample_data(3), s.sample(3).data());
        assert_eq!(s.class_indices(0), vec![0, 2]);
        assert_eq!(s.class_histogram(3), vec![2, 1, 1]);
    }

    #[test]
    fn subset_and_split() {
        let s = toy();
        let sub = s.subset(&[3, 0]).unwrap();
        assert_eq!(sub.labels(), &[2, 0]);
        assert_eq!(sub.sample(0), s.sample(3));
        let (a, b) = s.split(1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 3));
        assert!(s.split(4).is_err());
        assert!(s.subset(&[9]).is_err());
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let images = Tensor::full(&[1, 1, 1, 1], 1.5);
        assert!(LabeledSet::new(images, vec![0]).is_err());
        assert!(LabeledSet::new(Tensor::zeros(&[2, 1, 1, 1]), vec![0]).is_err());
    }
}
