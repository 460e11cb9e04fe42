//! Dataset ingestion: the CIFAR-10 binary container, a deterministic
//! synthetic generator for desk-scale runs, and training-stream
//! augmentation (zero-pad + random crop, horizontal flip).

mod augment;
mod cifar;
mod synthetic;

pub use augment::Augment;
pub use cifar::load_cifar10_binary;
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// In-memory labelled image set, channels-first, values in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<u8>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<u8>,
        channels: usize,
        height: usize,
        width: usize,
        classes: usize,
    ) -> Result<Self> {
        let stride = channels * height * width;
        if stride == 0 || images.len() != labels.len() * stride {
            return Err(Error::InvalidArgument {
                op: "Dataset::new",
                msg: format!(
                    "{} pixels for {} labels at {} per image",
                    images.len(),
                    labels.len(),
                    stride
                ),
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(Error::LabelOutOfRange { label: l as usize, classes, index: i });
        }
        Ok(Dataset { images, labels, channels, height, width, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn stride(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let s = self.stride();
        &self.images[i * s..(i + 1) * s]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Assemble a batch tensor (N,C,H,W) and its labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let s = self.stride();
        let mut data = Vec::with_capacity(indices.len() * s);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
            labels.push(self.label(i));
        }
        let t = Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)
            .expect("batch shape is consistent by construction");
        (t, labels)
    }

    /// Deterministic head/tail split: the first `fraction` of samples stay,
    /// the rest form the second set. Callers shuffle indices beforehand if
    /// the source ordering is not already mixed.
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let cut = cut.min(self.len());
        let s = self.stride();
        let a = Dataset {
            images: self.images[..cut * s].to_vec(),
            labels: self.labels[..cut].to_vec(),
            ..self.clone()
        };
        let b = Dataset {
            images: self.images[cut * s..].to_vec(),
            labels: self.labels[cut..].to_vec(),
            ..self.clone()
        };
        (a, b)
    }

    pub fn in_unit_range(&self) -> bool {
        self.images.iter().all(|&v| (0.0..=1.0).contains(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_assembles_requested_samples() {
        let ds = Dataset::new(
            (0..2 * 3 * 2 * 2).map(|v| v as f32 / 100.0).collect(),
            vec![1, 0],
            3,
            2,
            2,
            2,
        )
        .unwrap();
        let (t, labels) = ds.batch(&[1, 0]);
        assert_eq!(t.shape(), &[2, 3, 2, 2]);
        assert_eq!(labels, vec![0, 1]);
        assert_eq!(&t.data()[..12], ds.image(1));
    }

    #[test]
    fn label_range_checked_up_front() {
        let err = Dataset::new(vec![0.0; 12], vec![5], 3, 2, 2, 4).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 5, classes: 4, index: 0 }));
    }

    #[test]
    fn split_is_exact_and_exhaustive() {
        let ds = Dataset::new(vec![0.5; 10 * 12], vec![0; 10], 3, 2, 2, 2).unwrap();
        let (a, b) = ds.split(0.9);
        assert_eq!(a.len(), 9);
        assert_eq!(b.len(), 1);
    }
}
