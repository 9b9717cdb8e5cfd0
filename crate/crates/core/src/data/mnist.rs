use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Environment variable naming the dataset cache directory.
pub const DATA_DIR_ENV: &str = "DRASIC_DATA_DIR";

/// Which half of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataSplit {
    Train,
    Test,
}

impl fmt::Display for DataSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSplit::Train => "train",
            DataSplit::Test => "test",
        })
    }
}

impl FromStr for DataSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(DataSplit::Train),
            "test" => Ok(DataSplit::Test),
            _ => Err(Error::InvalidArgument(format!(
                "unknown data split {s:?} (train or test)"
            ))),
        }
    }
}

/// Images `[n, 1, h, w]` in `[0, 1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: DataSplit,
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: DataSplit,
        images: Tensor<f32>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::Data(format!(
                "{} images of shape {:?} for {} labels",
                images.shape().first().unwrap_or(&0),
                images.shape(),
                labels.len()
            )));
        }
        Ok(Dataset {
            name: name.into(),
            split,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The images at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let per = self.images.len() / self.len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "image index {i} out of range for {} images",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }
}

/// A file of the standard MNIST distribution with its SHA-256.
struct MnistFile {
    name: &'static str,
    sha256: &'static str,
}

const TRAIN_IMAGES: MnistFile = MnistFile {
    name: "train-images-idx3-ubyte",
    sha256: "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
};
const TRAIN_LABELS: MnistFile = MnistFile {
    name: "train-labels-idx1-ubyte",
    sha256: "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
};
const TEST_IMAGES: MnistFile = MnistFile {
    name: "t10k-images-idx3-ubyte",
    sha256: "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
};
const TEST_LABELS: MnistFile = MnistFile {
    name: "t10k-labels-idx1-ubyte",
    sha256: "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
};

/// `$DRASIC_DATA_DIR`, else `~/.cache/drasic/mnist`.
pub fn default_data_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("drasic").join("mnist")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn read_verified(dir: &Path, file: &MnistFile) -> Result<Vec<u8>> {
    let path = dir.join(file.name);
    let bytes = std::fs::read(&path).map_err(|e| {
        Error::Data(format!(
            "cannot read {} ({e}); place the uncompressed MNIST file there \
             (expected sha256 {}) or point {DATA_DIR_ENV} at a directory holding it",
            path.display(),
            file.sha256
        ))
    })?;
    let found = sha256_hex(&bytes);
    if found != file.sha256 {
        return Err(Error::Checksum {
            path,
            expected: file.sha256.into(),
            found,
        });
    }
    Ok(bytes)
}

fn be_u32(b: &[u8], at: usize) -> usize {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap()) as usize
}

/// Parses an IDX3 `u8` image file into `[n, 1, rows, cols]` scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 16 || be_u32(bytes, 0) != 0x0803 {
        return Err(Error::Data("not an IDX3 unsigned-byte image file".into()));
    }
    let (n, rows, cols) = (be_u32(bytes, 4), be_u32(bytes, 8), be_u32(bytes, 12));
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Data(format!(
            "IDX header promises {n}x{rows}x{cols} pixels, file holds {}",
            body.len()
        )));
    }
    Tensor::new(
        vec![n, 1, rows, cols],
        body.iter().map(|&p| p as f32 / 255.0).collect(),
    )
}

/// Parses an IDX1 `u8` label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < 8 || be_u32(bytes, 0) != 0x0801 {
        return Err(Error::Data("not an IDX1 unsigned-byte label file".into()));
    }
    let n = be_u32(bytes, 4);
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Data(format!(
            "IDX header promises {n} labels, file holds {}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

/// Loads MNIST from `dir`, verifying every file's checksum.
pub fn load_mnist(dir: &Path, split: DataSplit) -> Result<Dataset> {
    let (img, lab) = match split {
        DataSplit::Train => (TRAIN_IMAGES, TRAIN_LABELS),
        DataSplit::Test => (TEST_IMAGES, TEST_LABELS),
    };
    let images = parse_idx_images(&read_verified(dir, &img)?)?;
    let labels = parse_idx_labels(&read_verified(dir, &lab)?)?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Data(format!("MNIST label {bad} outside 0..=9")));
    }
    Dataset::new("mnist", split, images, labels)
}

/// SHA-256 of every MNIST file expected for `split`, by file name.
pub fn mnist_checksums(split: DataSplit) -> [(&'static str, &'static str); 2] {
    let (a, b) = match split {
        DataSplit::Train => (TRAIN_IMAGES, TRAIN_LABELS),
        DataSplit::Test => (TEST_IMAGES, TEST_LABELS),
    };
    [(a.name, a.sha256), (b.name, b.sha256)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx3(n: usize, r: usize, c: usize, px: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3];
        for v in [n, r, c] {
            b.extend_from_slice(&(v as u32).to_be_bytes());
        }
        b.extend_from_slice(px);
        b
    }

    #[test]
    fn parses_and_scales() {
        let t = parse_idx_images(&idx3(2, 1, 2, &[0, 255, 51, 102])).unwrap();
        assert_eq!(t.shape(), &[2, 1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4]);
        let mut l = vec![0, 0, 8, 1, 0, 0, 0, 3];
        l.extend_from_slice(&[1, 2, 3]);
        assert_eq!(parse_idx_labels(&l).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn rejects_bad_idx() {
        assert!(parse_idx_images(&idx3(2, 2, 2, &[0; 7])).is_err());
        assert!(parse_idx_images(&[0, 0, 8, 1]).is_err());
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 5, 1]).is_err());
    }

    #[test]
    fn missing_files_name_expected_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_mnist(dir.path(), DataSplit::Test)
            .unwrap_err()
            .to_string();
        assert!(err.contains(TEST_IMAGES.sha256), "{err}");
        assert!(err.contains(DATA_DIR_ENV));
    }

    #[test]
    fn corrupt_file_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(TEST_IMAGES.name), idx3(1, 1, 1, &[0])).unwrap();
        let err = load_mnist(dir.path(), DataSplit::Test).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. }), "{err}");
    }

    #[test]
    fn gather_orders_and_checks() {
        let ds = Dataset::new(
            "toy",
            DataSplit::Train,
            Tensor::new(vec![3, 1, 1, 1], vec![0.0, 0.5, 1.0]).unwrap(),
            vec![0, 1, 2],
        )
        .unwrap();
        assert_eq!(ds.gather(&[2, 0]).unwrap().data(), &[1.0, 0.0]);
        assert!(ds.gather(&[3]).is_err());
    }
}
