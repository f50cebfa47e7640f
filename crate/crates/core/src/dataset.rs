//! IDX and CIFAR-10 binary ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message} at byte offset {offset}")]
    Format { path: PathBuf, offset: usize, message: String },
    #[error("{0}")]
    Mismatch(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    #[default]
    Idx,
    CifarBinary,
}

/// Images with shape `[C, H, W]` and integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub shape: [usize; 3],
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples (all when `n` exceeds the length).
    pub fn head(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split { images: self.images[..n].to_vec(), labels: self.labels[..n].to_vec(), shape: self.shape }
    }

    /// Samples at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Split {
        Split {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
        }
    }

    /// Shape `[N, C, H, W]` of the whole split.
    pub fn batch_shape(&self) -> [usize; 4] {
        [self.len(), self.shape[0], self.shape[1], self.shape[2]]
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub normalization: Normalization,
}

/// Per-channel standardisation fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(split: &Split) -> Self {
        let [c, h, w] = split.shape;
        let plane = h * w;
        let count = (plane * split.len()) as f64;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for img in &split.images {
            for (ch, chunk) in img.data().chunks(plane).enumerate() {
                for &v in chunk {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / count - m * m).max(0.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, split: &mut Split) {
        let plane = split.shape[1] * split.shape[2];
        for img in &mut split.images {
            for (ch, chunk) in img.data_mut().chunks_mut(plane).enumerate() {
                let (m, s) = (self.mean[ch], self.std[ch]);
                for v in chunk {
                    *v = ((*v as f64 - m) / s) as f32;
                }
            }
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Format { path: path.to_path_buf(), offset, message: message.into() }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DatasetError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), "truncated header"))
}

/// Parse an IDX image file (`[N, 1, H, W]`, pixels scaled to `[0, 1]`).
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Split, DatasetError> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(path, 0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let h = be_u32(bytes, 8, path)? as usize;
    let w = be_u32(bytes, 12, path)? as usize;
    if h == 0 || w == 0 {
        return Err(format_err(path, 8, "zero image extent"));
    }
    let plane = h * w;
    let needed = 16 + n * plane;
    if bytes.len() < needed {
        return Err(format_err(path, bytes.len(), format!("truncated pixel data, expected {needed} bytes")));
    }
    let images = bytes[16..needed]
        .chunks(plane)
        .map(|px| Tensor::new(vec![1, h, w], px.iter().map(|&b| b as f32 / 255.0).collect()).expect("shape matches"))
        .collect();
    Ok(Split { images, labels: vec![0; n], shape: [1, h, w] })
}

/// Parse an IDX label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path, num_classes: usize) -> Result<Vec<usize>, DatasetError> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(path, 0, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(format_err(path, bytes.len(), format!("truncated labels, expected {} bytes", 8 + n)));
    }
    bytes[8..8 + n]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if (b as usize) < num_classes {
                Ok(b as usize)
            } else {
                Err(format_err(path, 8 + i, format!("label {b} out of range")))
            }
        })
        .collect()
}

/// Parse CIFAR-10 binary records (`[N, 3, 32, 32]`, pixels in `[0, 1]`).
pub fn parse_cifar(bytes: &[u8], path: &Path, num_classes: usize) -> Result<Split, DatasetError> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(format_err(path, offset, "truncated record"));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for (r, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        if rec[0] as usize >= num_classes {
            return Err(format_err(path, r * CIFAR_RECORD, format!("label {} out of range", rec[0])));
        }
        labels.push(rec[0] as usize);
        let data = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
        images.push(Tensor::new(vec![3, CIFAR_SIDE, CIFAR_SIDE], data).expect("shape matches"));
    }
    Ok(Split { images, labels, shape: [3, CIFAR_SIDE, CIFAR_SIDE] })
}

fn load_idx_split(images: &Path, labels: &Path, num_classes: usize) -> Result<Split, DatasetError> {
    let mut split = parse_idx_images(&read(images)?, images)?;
    let lab = parse_idx_labels(&read(labels)?, labels, num_classes)?;
    if lab.len() != split.len() {
        return Err(DatasetError::Mismatch(format!(
            "{} has {} labels but {} has {} images",
            labels.display(),
            lab.len(),
            images.display(),
            split.len()
        )));
    }
    split.labels = lab;
    Ok(split)
}

/// Unnormalised train and test splits from a dataset directory.
///
/// IDX directories hold `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
/// `t10k-images-idx3-ubyte` and `t10k-labels-idx1-ubyte`. CIFAR directories
/// hold `data_batch_{1..5}.bin` (any present) and `test_batch.bin`.
pub fn load_raw(dir: &Path, format: DatasetFormat, num_classes: usize) -> Result<(Split, Split), DatasetError> {
    match format {
        DatasetFormat::Idx => Ok((
            load_idx_split(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"), num_classes)?,
            load_idx_split(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"), num_classes)?,
        )),
        DatasetFormat::CifarBinary => {
            let mut train: Option<Split> = None;
            for b in 1..=5 {
                let p = dir.join(format!("data_batch_{b}.bin"));
                if !p.exists() {
                    continue;
                }
                let part = parse_cifar(&read(&p)?, &p, num_classes)?;
                match &mut train {
                    Some(t) => {
                        t.images.extend(part.images);
                        t.labels.extend(part.labels);
                    }
                    None => train = Some(part),
                }
            }
            let train = train.ok_or_else(|| DatasetError::Io {
                path: dir.join("data_batch_1.bin"),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no training batches"),
            })?;
            let p = dir.join("test_batch.bin");
            let test = parse_cifar(&read(&p)?, &p, num_classes)?;
            Ok((train, test))
        }
    }
}

/// Load both splits and standardise them with training-set statistics.
pub fn load_dataset(dir: &Path, format: DatasetFormat, num_classes: usize) -> Result<Dataset, DatasetError> {
    let (mut train, mut test) = load_raw(dir, format, num_classes)?;
    if train.shape != test.shape {
        return Err(DatasetError::Mismatch("train and test image shapes differ".into()));
    }
    let normalization = Normalization::fit(&train);
    normalization.apply(&mut train);
    normalization.apply(&mut test);
    Ok(Dataset { train, test, normalization })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, h: u32, w: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, h, w] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn idx_shape_and_scaling() {
        let bytes = idx_images(10, 28, 28, &vec![255u8; 10 * 784]);
        let s = parse_idx_images(&bytes, Path::new("x")).unwrap();
        assert_eq!(s.batch_shape(), [10, 1, 28, 28]);
        assert!(s.images[3].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truncated_idx_names_offset() {
        let mut bytes = idx_images(2, 2, 2, &[0; 8]);
        bytes.truncate(20);
        match parse_idx_images(&bytes, Path::new("x")) {
            Err(DatasetError::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
        match parse_idx_images(&bytes[..10], Path::new("x")) {
            Err(DatasetError::Format { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_label_range() {
        let mut bytes = idx_images(1, 1, 1, &[0]);
        bytes[3] = 0x01;
        assert!(matches!(parse_idx_images(&bytes, Path::new("x")), Err(DatasetError::Format { offset: 0, .. })));
        let mut labels = Vec::new();
        labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[1, 9, 12]);
        match parse_idx_labels(&labels, Path::new("y"), 10) {
            Err(DatasetError::Format { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cifar_records() {
        let mut bytes = vec![7u8];
        bytes.extend(std::iter::repeat_n(255u8, 3072));
        let s = parse_cifar(&bytes, Path::new("c"), 10).unwrap();
        assert_eq!(s.labels, vec![7]);
        assert_eq!(s.batch_shape(), [1, 3, 32, 32]);
        assert!(matches!(parse_cifar(&bytes[..100], Path::new("c"), 10), Err(DatasetError::Format { offset: 0, .. })));
    }

    #[test]
    fn normalization_of_full_intensity_pixel() {
        // One channel with pixels {0, 1, 1, 1}: mean 0.75, std sqrt(0.1875).
        let img = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        let mut s = Split { images: vec![img], labels: vec![0], shape: [1, 2, 2] };
        let norm = Normalization::fit(&s);
        assert!((norm.mean[0] - 0.75).abs() < 1e-12);
        assert!((norm.std[0] - 0.1875f64.sqrt()).abs() < 1e-12);
        norm.apply(&mut s);
        let want = ((1.0 - 0.75) / 0.1875f64.sqrt()) as f32;
        assert_eq!(s.images[0].data()[1], want);
    }
}
