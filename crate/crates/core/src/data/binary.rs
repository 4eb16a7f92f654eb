use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Fixed-size record layout: `label_bytes` header bytes (the label is the
/// last of them) followed by `C*H*W` pixel bytes, channel-planar row-major.
///
/// The default is the CIFAR-10 binary layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryLayout {
    pub label_bytes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

impl Default for BinaryLayout {
    fn default() -> Self {
        BinaryLayout::CIFAR10
    }
}

impl BinaryLayout {
    pub const CIFAR10: BinaryLayout = BinaryLayout {
        label_bytes: 1,
        channels: 3,
        height: 32,
        width: 32,
        num_classes: 10,
    };

    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn record_size(&self) -> usize {
        self.label_bytes + self.pixels()
    }

    fn validate(&self) -> Result<()> {
        if self.label_bytes == 0 || self.pixels() == 0 || self.num_classes == 0 || self.num_classes > 256 {
            return Err(Error::config(format!("invalid binary layout {self:?}")));
        }
        Ok(())
    }
}

/// Decodes an in-memory image file. Pixels become `byte / 255`.
pub fn parse_binary_images(bytes: &[u8], layout: &BinaryLayout) -> Result<Dataset> {
    layout.validate()?;
    let rec = layout.record_size();
    if bytes.is_empty() {
        return Err(Error::DataAt {
            offset: 0,
            message: "empty image file".into(),
        });
    }
    if !bytes.len().is_multiple_of(rec) {
        let whole = bytes.len() / rec;
        return Err(Error::DataAt {
            offset: (whole * rec) as u64,
            message: format!(
                "truncated record: {} trailing bytes, records are {rec} bytes",
                bytes.len() - whole * rec
            ),
        });
    }
    let m = bytes.len() / rec;
    let mut labels = Vec::with_capacity(m);
    let mut data = Vec::with_capacity(m * layout.pixels());
    for (i, record) in bytes.chunks_exact(rec).enumerate() {
        let label_pos = layout.label_bytes - 1;
        let label = record[label_pos] as usize;
        if label >= layout.num_classes {
            return Err(Error::DataAt {
                offset: (i * rec + label_pos) as u64,
                message: format!("label {label} outside [0, {})", layout.num_classes),
            });
        }
        labels.push(label);
        data.extend(record[layout.label_bytes..].iter().map(|&b| b as f32 / 255.0));
    }
    let images = Tensor::new(vec![m, layout.channels, layout.height, layout.width], data)?;
    Dataset::new(images, labels, layout.num_classes)
}

pub fn load_binary_images(path: impl AsRef<Path>, layout: &BinaryLayout) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_binary_images(&bytes, layout)
}

/// Encodes a dataset in `layout`. Pixels are rounded to the nearest byte;
/// leading label bytes other than the last are zero.
pub fn encode_binary_images(dataset: &Dataset, layout: &BinaryLayout) -> Result<Vec<u8>> {
    layout.validate()?;
    let [c, h, w] = dataset.sample_shape();
    if [c, h, w] != [layout.channels, layout.height, layout.width] {
        return Err(Error::config(format!(
            "dataset samples are {c}x{h}x{w}, layout expects {}x{}x{}",
            layout.channels, layout.height, layout.width
        )));
    }
    if dataset.num_classes() > layout.num_classes {
        return Err(Error::config("dataset has more classes than the layout allows"));
    }
    let mut out = Vec::with_capacity(dataset.len() * layout.record_size());
    for i in 0..dataset.len() {
        out.extend(std::iter::repeat_n(0u8, layout.label_bytes - 1));
        out.push(dataset.labels()[i] as u8);
        out.extend(
            dataset
                .image(i)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

pub fn write_binary_images(path: impl AsRef<Path>, dataset: &Dataset, layout: &BinaryLayout) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_binary_images(dataset, layout)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: BinaryLayout = BinaryLayout {
        label_bytes: 1,
        channels: 3,
        height: 2,
        width: 2,
        num_classes: 10,
    };

    #[test]
    fn constant_record() {
        let mut bytes = vec![3u8];
        bytes.extend(std::iter::repeat_n(255u8, 3072));
        let ds = parse_binary_images(&bytes, &BinaryLayout::CIFAR10).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels(), &[3]);
        assert_eq!(ds.sample_shape(), [3, 32, 32]);
        assert!(ds.images().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_and_truncated_files_rejected() {
        assert!(matches!(
            parse_binary_images(&[], &TINY),
            Err(Error::DataAt { offset: 0, .. })
        ));
        let bytes = vec![1u8; TINY.record_size() * 2 + 5];
        match parse_binary_images(&bytes, &TINY) {
            Err(Error::DataAt { offset, .. }) => assert_eq!(offset, 26),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_label_reports_offset() {
        let mut bytes = vec![0u8; TINY.record_size() * 3];
        bytes[2 * TINY.record_size()] = 10;
        match parse_binary_images(&bytes, &TINY) {
            Err(Error::DataAt { offset, .. }) => assert_eq!(offset, 26),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_is_last_header_byte() {
        let layout = BinaryLayout {
            label_bytes: 2,
            num_classes: 100,
            ..TINY
        };
        let mut bytes = vec![7u8, 42];
        bytes.extend([0u8; 12]);
        let ds = parse_binary_images(&bytes, &layout).unwrap();
        assert_eq!(ds.labels(), &[42]);
    }
}
