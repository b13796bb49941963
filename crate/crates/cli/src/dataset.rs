//! MNIST IDX and CIFAR-10 binary readers.
//!
//! Images come out as one contiguous byte buffer in the engine layout:
//! row-major with interleaved channels. CIFAR stores each image as three
//! planar 32x32 channels, which are interleaved at load.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use bdnn_core::Dims;
use thiserror::Error;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_IMAGE: usize = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;
pub const CIFAR_ROW: usize = 1 + CIFAR_IMAGE;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("no dataset found in {0} (expected MNIST IDX or CIFAR-10 binary files)")]
    NotFound(PathBuf),
}

fn parse_err(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        })
    }
}

/// Labelled 8-bit images, stored back to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub dims: Dims,
    pub images: Vec<u8>,
    pub labels: Option<Vec<u8>>,
    pub paths: Vec<PathBuf>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len() / self.dims.len().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.dims.len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u8]> {
        self.images.chunks_exact(self.dims.len().max(1))
    }

    /// Keeps the first `n` images.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.images.truncate(n * self.dims.len());
            if let Some(l) = &mut self.labels {
                l.truncate(n);
            }
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// IDX image file: magic, count, rows, cols as big-endian u32, then pixels.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(Dims, usize, Vec<u8>), DataError> {
    if bytes.len() < 16 {
        return Err(parse_err(path, "truncated IDX header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(parse_err(path, format!("bad IDX image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4) as usize;
    let dims = Dims::new(be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize, 1);
    let expected = count
        .checked_mul(dims.len())
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| parse_err(path, "IDX header sizes overflow"))?;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            format!(
                "{count} images of {}x{} need {expected} bytes, file has {}",
                dims.rows,
                dims.cols,
                bytes.len()
            ),
        ));
    }
    Ok((dims, count, bytes[16..].to_vec()))
}

/// IDX label file: magic and count as big-endian u32, then one byte per label.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, DataError> {
    if bytes.len() < 8 {
        return Err(parse_err(path, "truncated IDX header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(parse_err(path, format!("bad IDX label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4) as usize;
    if bytes.len() - 8 != count {
        return Err(parse_err(
            path,
            format!("{count} labels need {} bytes, file has {}", count + 8, bytes.len()),
        ));
    }
    Ok(bytes[8..].to_vec())
}

pub fn parse_mnist(images: &Path, labels: Option<&Path>) -> Result<Dataset, DataError> {
    let (dims, count, pixels) = parse_idx_images(&read(images)?, images)?;
    let mut paths = vec![images.to_path_buf()];
    let labels = match labels {
        Some(p) => {
            let l = parse_idx_labels(&read(p)?, p)?;
            if l.len() != count {
                return Err(parse_err(p, format!("{} labels for {count} images", l.len())));
            }
            paths.push(p.to_path_buf());
            Some(l)
        }
        None => None,
    };
    Ok(Dataset {
        kind: DatasetKind::Mnist,
        dims,
        images: pixels,
        labels,
        paths,
    })
}

/// One CIFAR-10 batch: rows of a label byte then 1024 red, 1024 green and 1024 blue bytes.
pub fn parse_cifar10_batch(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_ROW) {
        return Err(parse_err(
            path,
            format!("length {} is not a multiple of {CIFAR_ROW}-byte rows", bytes.len()),
        ));
    }
    let rows = bytes.len() / CIFAR_ROW;
    let mut labels = Vec::with_capacity(rows);
    let mut images = vec![0u8; rows * CIFAR_IMAGE];
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    for (row, dst) in bytes.chunks_exact(CIFAR_ROW).zip(images.chunks_exact_mut(CIFAR_IMAGE)) {
        if row[0] > 9 {
            return Err(parse_err(path, format!("label {} out of range", row[0])));
        }
        labels.push(row[0]);
        let src = &row[1..];
        for (p, px) in dst.chunks_exact_mut(CIFAR_CHANNELS).enumerate() {
            for (c, v) in px.iter_mut().enumerate() {
                *v = src[c * plane + p];
            }
        }
    }
    Ok((images, labels))
}

pub fn parse_cifar10(paths: &[PathBuf]) -> Result<Dataset, DataError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let (i, l) = parse_cifar10_batch(&read(p)?, p)?;
        images.extend(i);
        labels.extend(l);
    }
    Ok(Dataset {
        kind: DatasetKind::Cifar10,
        dims: Dims::new(CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS),
        images,
        labels: Some(labels),
        paths: paths.to_vec(),
    })
}

fn first_existing(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

/// Finds a test split in `dir`: MNIST `t10k-*-ubyte` files or CIFAR-10 `test_batch.bin`.
///
/// With `train`, the training split is used instead.
pub fn load_dir(dir: &Path, kind: Option<DatasetKind>, train: bool) -> Result<Dataset, DataError> {
    let prefix = if train { "train" } else { "t10k" };
    let mnist = || {
        let images = first_existing(
            dir,
            &[&format!("{prefix}-images-idx3-ubyte"), &format!("{prefix}-images.idx3-ubyte")],
        )?;
        let labels = first_existing(
            dir,
            &[&format!("{prefix}-labels-idx1-ubyte"), &format!("{prefix}-labels.idx1-ubyte")],
        );
        Some((images, labels))
    };
    let cifar = || {
        let names: Vec<String> = if train {
            (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
        } else {
            vec!["test_batch.bin".into()]
        };
        let found: Vec<PathBuf> = names
            .iter()
            .filter_map(|n| first_existing(dir, &[n]).or_else(|| first_existing(&dir.join("cifar-10-batches-bin"), &[n])))
            .collect();
        (!found.is_empty()).then_some(found)
    };
    if kind != Some(DatasetKind::Cifar10) {
        if let Some((images, labels)) = mnist() {
            return parse_mnist(&images, labels.as_deref());
        }
    }
    if kind != Some(DatasetKind::Mnist) {
        if let Some(paths) = cifar() {
            return parse_cifar10(&paths);
        }
    }
    Err(DataError::NotFound(dir.to_path_buf()))
}
