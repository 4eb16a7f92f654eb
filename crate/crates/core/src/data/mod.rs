//! Datasets, non-IID partitioning and minibatching.

mod batch;
mod binary;
mod partition;
mod synthetic;

pub use batch::batches;
pub use binary::{encode_binary_images, load_binary_images, parse_binary_images, write_binary_images, BinaryLayout};
pub use partition::{label_skew, partition_dirichlet, Partition};
pub use synthetic::{generate_synthetic, SyntheticTask};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Labelled images with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::data(format!("images must be [M,C,H,W], got {shape:?}")));
        }
        if labels.is_empty() || labels.len() != shape[0] {
            return Err(Error::data(format!("{} labels for {} images", labels.len(), shape[0])));
        }
        if num_classes == 0 {
            return Err(Error::data("num_classes must be positive"));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::data(format!(
                "label {l} at index {i} outside [0, {num_classes})"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Copies the selected samples into a batch tensor.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.sample_shape();
        let images = Tensor::new(vec![indices.len(), c, h, w], data).expect("gathered shape");
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (images, labels)
    }

    /// Subset as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (images, labels) = self.gather(indices);
        Dataset::new(images, labels, self.num_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rounds every pixel to the nearest multiple of 1/255, the precision of
    /// the binary image format.
    pub fn quantize_u8(&self) -> Dataset {
        let mut images = self.images.clone();
        for v in images.data_mut() {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0;
        }
        Dataset {
            images,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }
}
