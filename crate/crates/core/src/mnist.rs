//! MNIST in IDX format: parsing, normalization, one-hot labels and minibatch
//! sampling.
//!
//! IDX files start with a big-endian `u32` magic (2051 for images, 2049 for
//! labels), then one big-endian `u32` per dimension, then the raw bytes.

use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const NUM_LABELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    /// Reads a header whose magic must equal `magic` and which must have
    /// `rank` dimensions. Returns the header and its length in bytes.
    pub fn parse(bytes: &[u8], magic: u32, rank: usize) -> Result<(Self, usize)> {
        let found = read_u32(bytes, 0)?;
        if found != magic {
            return Err(Error::Format {
                expected: format!("magic {magic}"),
                actual: format!("magic {found}"),
            });
        }
        // The low byte of the magic is the number of dimensions.
        let declared = (found & 0xff) as usize;
        if declared != rank {
            return Err(Error::Format {
                expected: format!("{rank} dimensions"),
                actual: format!("{declared} dimensions"),
            });
        }
        let dims = (0..rank)
            .map(|i| read_u32(bytes, 4 + 4 * i))
            .collect::<Result<Vec<_>>>()?;
        Ok((Self { magic, dims }, 4 + 4 * rank))
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = self.magic.to_be_bytes().to_vec();
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Length { needed: at + 4, available: bytes.len() })
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let needed = start + len;
    if bytes.len() < needed {
        return Err(Error::Length { needed, available: bytes.len() });
    }
    Ok(&bytes[start..needed])
}

/// One image as stored on disk: row-major bytes, one per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<RawImage>> {
    let (header, start) = IdxHeader::parse(bytes, IMAGE_MAGIC, 3)?;
    let [count, rows, cols] = [0, 1, 2].map(|i| header.dims[i] as usize);
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            expected: "nonzero image extents".into(),
            actual: format!("{rows}x{cols}"),
        });
    }
    let size = rows * cols;
    let data = payload(bytes, start, count * size)?;
    Ok(data
        .chunks_exact(size)
        .map(|p| RawImage { rows, cols, pixels: p.to_vec() })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let found = read_u32(bytes, 0)?;
    if found == LABEL_MAGIC & !0xff {
        return Err(Error::Format {
            expected: "1 dimension".into(),
            actual: "0 dimensions".into(),
        });
    }
    let (header, start) = IdxHeader::parse(bytes, LABEL_MAGIC, 1)?;
    let labels = payload(bytes, start, header.dims[0] as usize)?;
    if let Some(pos) = labels.iter().position(|&l| l as usize >= NUM_LABELS) {
        return Err(Error::Value(format!("label {} at index {pos} is not a digit", labels[pos])));
    }
    Ok(labels.to_vec())
}

/// Serializes images of a common size to IDX3 bytes.
pub fn encode_idx_images(images: &[RawImage]) -> Result<Vec<u8>> {
    let (rows, cols) = images.first().map_or((28, 28), |i| (i.rows, i.cols));
    let header = IdxHeader {
        magic: IMAGE_MAGIC,
        dims: vec![images.len() as u32, rows as u32, cols as u32],
    };
    let mut out = header.encode();
    for img in images {
        if img.rows != rows || img.cols != cols || img.pixels.len() != rows * cols {
            return Err(Error::shape(format!(
                "image {}x{} with {} pixels in a {rows}x{cols} set",
                img.rows,
                img.cols,
                img.pixels.len()
            )));
        }
        out.extend_from_slice(&img.pixels);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = IdxHeader { magic: LABEL_MAGIC, dims: vec![labels.len() as u32] }.encode();
    out.extend_from_slice(labels);
    out
}

/// Maps bytes linearly onto `[0, 1]`: 0 is white, 255 is full ink.
pub fn normalize(raw: &RawImage) -> Tensor {
    let data = raw.pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(&[raw.rows, raw.cols, 1], data).expect("pixel count matches extents")
}

pub fn one_hot(label: u8) -> Result<Tensor> {
    let label = label as usize;
    if label >= NUM_LABELS {
        return Err(Error::Value(format!("label {label} is outside 0..{NUM_LABELS}")));
    }
    let mut data = vec![0.0; NUM_LABELS];
    data[label] = 1.0;
    Tensor::new(&[NUM_LABELS], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }

    /// SHA-256 of the uncompressed official image and label files.
    pub fn official_sha256(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => (
                "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
                "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
            ),
            Split::Test => (
                "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
                "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
            ),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Normalized images with one-hot labels. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Tensor>,
    labels: Vec<Tensor>,
    split: Split,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<Tensor>, split: Split) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels, split })
    }

    pub fn from_raw(images: &[RawImage], labels: &[u8], split: Split) -> Result<Self> {
        let labels = labels.iter().map(|&l| one_hot(l)).collect::<Result<Vec<_>>>()?;
        Self::new(images.iter().map(normalize).collect(), labels, split)
    }

    pub fn from_idx(image_bytes: &[u8], label_bytes: &[u8], split: Split) -> Result<Self> {
        Self::from_raw(&parse_idx_images(image_bytes)?, &parse_idx_labels(label_bytes)?, split)
    }

    /// Loads the uncompressed split files from `dir`.
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        Self::load_with(dir, split, None)
    }

    /// Like [`Dataset::load`], but first checks both files against the
    /// published SHA-256 digests.
    pub fn load_verified(dir: &Path, split: Split) -> Result<Self> {
        Self::load_with(dir, split, Some(split.official_sha256()))
    }

    /// Loads a split, checking `(images, labels)` digests when given.
    pub fn load_with(dir: &Path, split: Split, sha256: Option<(&str, &str)>) -> Result<Self> {
        let (img_name, lbl_name) = split.file_names();
        let img = read_checked(&dir.join(img_name), sha256.map(|s| s.0))?;
        let lbl = read_checked(&dir.join(lbl_name), sha256.map(|s| s.1))?;
        Self::from_idx(&img, &lbl, split)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[Tensor] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// First `n` examples (or all of them if there are fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }
}

fn read_checked(path: &Path, sha256: Option<&str>) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Some(expected) = sha256 {
        let actual = sha256_hex(&bytes);
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(Error::Checksum {
                file: path.display().to_string(),
                expected: expected.to_string(),
                actual,
            });
        }
    }
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Draws `m` examples uniformly with replacement.
pub fn sample_batch(data: &Dataset, m: usize, rng: &mut Rng) -> Result<Vec<(Tensor, Tensor)>> {
    if data.is_empty() {
        return Err(Error::param("cannot sample from an empty dataset"));
    }
    if m == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    Ok((0..m)
        .map(|_| {
            let i = rng.index(data.len());
            (data.images[i].clone(), data.labels[i].clone())
        })
        .collect())
}
